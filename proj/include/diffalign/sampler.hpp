#pragma once

#include "diffalign/diffusion.hpp"
#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"
#include "diffalign/imaging.hpp"
#include "diffalign/random.hpp"

#include <array>
#include <functional>
#include <optional>

namespace diffalign {

struct GuidanceConfig {
    double g_l = 0.0;      // 0 disables guidance exactly
    double fd_step = 1e-3; // finite-difference step in standardized units
};

struct TraceRecord {
    int t = 0;                       // chain position after the step (T..0)
    std::array<double, 9> h{};       // de-standardized homography entries
    double ncc = 0.0;                // structure-map NCC of the composite warp
    double pnorm_to_gt = 0.0;        // valid iff has_pnorm
    bool has_pnorm = false;
    double guidance_grad_norm = 0.0;
};

struct SampleTrace {
    std::vector<TraceRecord> records; // length = executed H steps + 1
};

struct SamplerConfig {
    int t_h = 100;
    int t_v = 500;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    int interleave = 5; // v-chain steps per H step (ceil(t_v / t_h))
    int coarse_size = 16;
    int max_restarts = 3;
    GuidanceConfig guidance;
    std::array<double, 9> h_mean{};     // standardization of the residual h - I
    std::array<double, 9> h_std{1, 1, 1, 1, 1, 1, 1, 1, 1};
};

struct AlignmentResult {
    bool failed = false;
    Homography h;                 // de-standardized, normalized
    DisplacementField v;          // final field at image resolution
    ImageBuffer warped;
    ValidityMask mask;
    SampleTrace trace;
    double final_ncc = -1.0;
    double pnorm_to_gt = 0.0;
    bool has_pnorm = false;
    int restarts = 0;
};

/// Homography-chain score in standardized coordinates.
using HScoreFn = std::function<Tensor(const Tensor& h_state, int t)>;

/// Per-step factory: given the globally warped source it returns the
/// displacement-chain score evaluator (the warp is the conditioning).
using VScoreFn = std::function<Tensor(const Tensor& v_state, int t)>;
using VScoreFactory = std::function<VScoreFn(const ImageBuffer& warped_src)>;

std::array<double, 9> standardize_h(const Homography& H, const SamplerConfig& cfg);
Homography destandardize_h(const Tensor& state, const SamplerConfig& cfg);

/// Guidance correction of the raw homography score (applied to the H
/// chain only): raw - g_l * grad, where grad is the central
/// finite-difference gradient of -NCC(structure(composite warp),
/// structure(dst)) with respect to the 9 standardized components.
/// An undefined NCC anywhere zeroes the gradient (degenerate_out set).
Tensor guided_h_score(const Tensor& raw_score, const Tensor& h_state,
                      const DisplacementField& v_field, const ImageBuffer& src,
                      const ImageBuffer& dst, const SamplerConfig& cfg,
                      double* grad_norm_out, bool* degenerate_out);

/// Reverse-diffusion alignment of src onto dst. h_gt, when given, fills
/// the per-step p-norm-to-ground-truth trace column.
AlignmentResult align(const ImageBuffer& src, const ImageBuffer& dst,
                      const HScoreFn& h_score, const VScoreFactory& v_factory,
                      const SamplerConfig& cfg, Rng& rng,
                      const Homography* h_gt = nullptr);

/// Per-round score construction for iterative alignment; round_src is the
/// previous round's warped output and h_accum the transform composed so far.
struct RoundScores {
    HScoreFn h_score;
    VScoreFactory v_factory;
};
using ScoreProvider =
    std::function<RoundScores(const ImageBuffer& round_src, const Homography& h_accum, int round)>;

/// Runs align n_iter times, feeding the warped output forward. The
/// reported transform is the composition of the per-round homographies
/// with the per-round fields composed by warping. n_iter = 1 equals
/// align exactly (same rng stream).
AlignmentResult align_iterative(const ImageBuffer& src, const ImageBuffer& dst,
                                const ScoreProvider& provider, const SamplerConfig& cfg,
                                int n_iter, Rng& rng, const Homography* h_gt = nullptr);

/// Oracle scores from ground truth: the closed-form perturbation-kernel
/// score toward the standardized residual of h_gt (and toward v_gt for
/// the field chain).
RoundScores oracle_scores(const Homography& h_gt, const DisplacementField& v_gt,
                          const SamplerConfig& cfg);

/// Calibrates the guidance strength so the guidance term's norm is about
/// `fraction` of the raw score norm at mid-chain, measured over a few
/// sample pairs. Returns 0 when no finite ratio could be measured.
double calibrate_guidance(const std::vector<const ImageBuffer*>& srcs,
                          const std::vector<const ImageBuffer*>& dsts,
                          const std::function<RoundScores(int pair_index)>& scores,
                          const SamplerConfig& cfg, double fraction, std::uint64_t seed);

} // namespace diffalign
