#pragma once

#include "diffalign/imaging.hpp"
#include "diffalign/nets.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/synth.hpp"
#include "diffalign/train.hpp"

#include <string>

namespace diffalign {

/// Single-file JSON configuration. Unknown keys are rejected; flags
/// override individual keys; the effective config is echoed into the
/// output directory and its hash recorded in every artifact.
struct RunConfig {
    // geometry / chains
    int image_size = 64;
    int coarse_size = 16;
    int t_h = 100;
    int t_v = 500;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    int interleave = 5;

    // guidance / inference
    double g_l = 0.0;
    double fd_step = 1e-3;
    int n_iter = 1;
    int max_restarts = 3;
    bool oracle = false;

    // losses
    double lambda_x = 1.0;
    double lambda_r = 0.1;
    bool delta_s_dynamic = true;
    bool delta_x_dynamic = true;
    bool delta_r_dynamic = true;

    // optimizer / training
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    long train_steps = 1000;
    int batch_size = 1;
    long checkpoint_interval = 0;
    bool warp_with_clean_h = false;

    // nets
    int embed_dim = 64;
    int hidden_dim = 128;
    int time_dim = 32;

    // data generation
    int n_pairs = 100;
    double scale_min = 1.0;
    double scale_max = 1.0;
    double max_translation = 0.0;
    double max_rotation_deg = 0.0;
    double perspective_amp = 0.0;
    bool coarse_rotation = false;
    double deform_amplitude = 0.0;
    std::string degrade_kind = "none";
    double degrade_param = 0.0;

    // ablation sweeps
    std::vector<int> sweep_t_h{25, 50, 100, 200};
    std::vector<int> sweep_t_v{125, 250, 500, 1000};
    std::vector<double> degrade_noise_sigmas{0.02, 0.04, 0.1};
    std::vector<double> degrade_blur_sigmas{1.0, 2.5, 5.0};
    std::vector<double> degrade_illum_alphas{0.75, 0.5, 0.25};
    long ablate_train_steps = 4000;

    // orchestration
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string dataset_dir;
    std::string eval_dataset_dir; // ablate evaluation suite; empty = dataset_dir
    std::string output_dir;
    std::string checkpoint;

    void validate() const;

    TransformRange transform_range() const;
    DegradeSpec degrade_spec() const;
    TrainConfig train_config() const;
    SamplerConfig sampler_config() const;
    HomographyNetConfig h_net_config() const;
    DisplacementNetConfig v_net_config() const;
    LossWeights loss_weights() const;
    AdamConfig adam_config() const;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json(const RunConfig& cfg);

/// FNV-1a hash of the canonical JSON serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

void write_effective_config(const std::string& dir, const RunConfig& cfg);

} // namespace diffalign
