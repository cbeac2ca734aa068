#pragma once

#include "diffalign/diffusion.hpp"
#include "diffalign/image.hpp"
#include "diffalign/random.hpp"
#include "diffalign/tensor.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace diffalign {

/// Named parameter tensors with gradient and optimizer-moment storage.
/// Entry order is fixed at construction and defines serialization and
/// reduction order.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::string kind; // conv_w | conv_b | fc_w | fc_b
        Tensor value, grad, m, v;
    };

    Tensor& add(const std::string& name, const std::string& kind, std::vector<int> dims);
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& grad(const std::string& name) { return entry(name).grad; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    void zero_grads();
    double grad_norm() const;
    long adam_step = 0;

private:
    std::vector<Entry> entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Decoupled-weight-decay adaptive-moment update over every entry.
void adamw_step(ParamStore& params, const AdamConfig& cfg);

/// Sinusoidal embedding of an integer step index; entries in [-1, 1].
Tensor time_embedding(int t, int dim);

// ---------------------------------------------------------------------
// Homography-path score network: a small shared convolutional encoder
// for each image plus an MLP trunk over
// [enc(I_s), enc(I_d), state(9), time_embedding].
// ---------------------------------------------------------------------

struct HomographyNetConfig {
    int img_size = 64;   // must be divisible by 8
    int embed_dim = 64;
    int hidden = 128;
    int time_dim = 32;
    int enc_c1 = 8, enc_c2 = 16, enc_c3 = 16;
};

class HomographyScoreNet {
public:
    explicit HomographyScoreNet(const HomographyNetConfig& cfg);

    /// Production init: scaled-normal conv/linear weights, zero head.
    void init_params(Rng& rng);
    /// Fully random init including the head (gradient checking).
    void init_random(Rng& rng);

    /// Image embedding. Input is converted to grayscale and resized to
    /// img_size if needed.
    Tensor encode(const ImageBuffer& img) const;

    /// Score for the standardized homography state. Pure function of
    /// (params, inputs).
    Tensor forward(const ImageBuffer& src, const ImageBuffer& dst,
                   const Tensor& h_state, int t) const;

    /// Same with precomputed embeddings (the embeddings are constant
    /// over a sampling run).
    Tensor forward_cached(const Tensor& enc_src, const Tensor& enc_dst,
                          const Tensor& h_state, int t) const;

    /// Records the tape for backward().
    Tensor forward_train(const ImageBuffer& src, const ImageBuffer& dst,
                         const Tensor& h_state, int t);

    /// Accumulates parameter gradients for the recorded forward; the
    /// tape is consumed. Throws NoRecordedForward without a tape.
    void backward(const Tensor& dscore);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const HomographyNetConfig& config() const { return cfg_; }

    struct Tape;

private:
    HomographyNetConfig cfg_;
    ParamStore params_;
    std::shared_ptr<Tape> tape_;

    Tensor image_to_tensor(const ImageBuffer& img) const;
    Tensor encode_impl(const Tensor& x, Tape* tape, int slot) const;
    Tensor trunk_impl(const Tensor& cat, Tape* tape) const;
};

// ---------------------------------------------------------------------
// Displacement-path score network: conditions on the structure maps of
// the warped source and the destination (box-downsampled to the coarse
// grid), stacked with the current field state; a small encoder-decoder
// with two downsamples, two upsamples and skip connections.
// ---------------------------------------------------------------------

struct DisplacementNetConfig {
    int field_size = 16; // must be divisible by 4
    int image_size = 64;
    int time_dim = 32;
    int c0 = 16, c1 = 24, c2 = 32;
};

class DisplacementScoreNet {
public:
    explicit DisplacementScoreNet(const DisplacementNetConfig& cfg);

    void init_params(Rng& rng);
    void init_random(Rng& rng);

    /// Conditioning stack (2, field, field) from the two images.
    Tensor prepare_condition(const ImageBuffer& warped_src, const ImageBuffer& dst) const;

    Tensor forward(const ImageBuffer& warped_src, const ImageBuffer& dst,
                   const Tensor& v_state, int t) const;
    Tensor forward_cond(const Tensor& cond, const Tensor& v_state, int t) const;
    Tensor forward_train(const ImageBuffer& warped_src, const ImageBuffer& dst,
                         const Tensor& v_state, int t);
    void backward(const Tensor& dscore);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const DisplacementNetConfig& config() const { return cfg_; }

    struct Tape;

private:
    DisplacementNetConfig cfg_;
    ParamStore params_;
    std::shared_ptr<Tape> tape_;

    Tensor forward_impl(const Tensor& cond, const Tensor& v_state, int t, Tape* tape) const;
};

// ---------------------------------------------------------------------
// Checkpoints: JSON header followed by "ADMT" tensor blocks keyed by
// parameter name (values and optimizer moments). Saving quantizes the
// live parameters to the serialized f32 precision so that a save/load
// cycle is idempotent and resumed runs match uninterrupted ones.
// ---------------------------------------------------------------------

struct ModelBundle {
    HomographyScoreNet h_net;
    DisplacementScoreNet v_net;
    std::array<double, 9> h_mean{};
    std::array<double, 9> h_std{};
    NoiseSchedule sched_h, sched_v;
    long train_step = 0;

    ModelBundle(const HomographyNetConfig& hc, const DisplacementNetConfig& vc)
        : h_net(hc), v_net(vc) {
        h_std.fill(1.0);
    }
};

void save_checkpoint(const std::string& path, ModelBundle& bundle,
                     const std::string& config_hash);
ModelBundle load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------
// Finite-difference gradient verification over every layer type used.
// ---------------------------------------------------------------------

struct GradCheckEntry {
    std::string kind;
    int checked = 0;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_kind;
    double worst = 0.0;
    bool pass = false;
};

/// Central-difference check of both networks' backward passes at random
/// parameters. `samples_per_kind` parameters of every layer kind are
/// probed. `corrupt` (test hook) perturbs one analytic gradient entry to
/// force a failure.
struct CorruptSpec {
    std::string param_name;
    std::size_t index = 0;
    double delta = 0.0;
};
GradCheckReport grad_check(std::uint64_t seed, int samples_per_kind, double tol,
                           const std::optional<CorruptSpec>& corrupt = std::nullopt);

} // namespace diffalign
