#pragma once

#include "diffalign/losses.hpp"
#include "diffalign/nets.hpp"
#include "diffalign/synth.hpp"

#include <string>
#include <vector>

namespace diffalign {

struct TrainConfig {
    int image_size = 64;
    int coarse_size = 16;
    int t_h = 100;
    int t_v = 500;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    AdamConfig adam;
    long steps = 1000;
    int batch_size = 1;
    long checkpoint_interval = 0; // 0 = final checkpoint only
    bool warp_with_clean_h = false;
    LossWeights weights;
    std::uint64_t seed = 0;
    std::string out_dir;
    HomographyNetConfig h_cfg;
    DisplacementNetConfig v_cfg;
};

struct TrainResult {
    std::string checkpoint_path; // final checkpoint
    std::string log_path;        // per-step CSV
    long steps_run = 0;
    double last_total = 0.0;
};

/// End-to-end joint training of both score networks on synthetic pairs.
/// Every step's randomness derives from hash(seed, step), so a resumed
/// run continues exactly where the uninterrupted one was. The loss log
/// has one CSV row per step. Throws DivergedTraining on a non-finite
/// loss.
TrainResult train(const TrainConfig& cfg, const std::vector<PairSample>& dataset,
                  const std::string& config_hash,
                  const std::string& resume_checkpoint = "");

} // namespace diffalign
