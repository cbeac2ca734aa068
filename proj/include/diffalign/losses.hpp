#pragma once

#include "diffalign/diffusion.hpp"
#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"
#include "diffalign/imaging.hpp"

namespace diffalign {

/// Loss weighting: fixed lambdas plus the dynamic schedules. delta_x
/// falls from 1 at t=0 to 0 at t=T; delta_r rises from 0 at t=0 to
/// 1e-3 at t=T; delta_s gates the displacement score loss off for the
/// first quarter of training.
struct LossWeights {
    double lambda_x = 1.0;
    double lambda_r = 0.1;
    double delta_r_peak = 1e-3;

    bool dynamic_s = true;
    bool dynamic_x = true;
    bool dynamic_r = true;

    double delta_s(long train_step, long total_steps) const;
    double delta_x(int t, int T) const;
    double delta_r(int t, int T) const;
};

/// Denoising score-matching loss for the homography chain:
/// | score_pred + z / sqrt(1 - alpha_bar_t) |^2.
double loss_score_h(const Tensor& score_pred, const Tensor& z, int t,
                    const NoiseSchedule& sched);

/// Same contract over field-shaped tensors.
double loss_score_v(const Tensor& score_pred, const Tensor& z, int t,
                    const NoiseSchedule& sched);

/// Gradient of the score-matching loss with respect to score_pred:
/// 2 (score_pred + z / sqrt(1 - alpha_bar_t)).
Tensor loss_score_grad(const Tensor& score_pred, const Tensor& z, int t,
                       const NoiseSchedule& sched);

/// delta_x(t) * p_norm(H_t, H_0) - NCC(structure(aligned), structure(dest))
/// over the warp validity mask, with the 20-point lattice and p = 2.
double loss_pixel(const Homography& Ht, const Homography& H0,
                  const ImageBuffer& aligned, const ImageBuffer& dest,
                  const ValidityMask& mask, int t, int T, const LossWeights& w);

/// delta_r(t) * p_norm(H_t, identity) + smoothness(v_t).
double loss_reg(const Homography& Ht, const DisplacementField& vt,
                int t, int T, const LossWeights& w, int img_w, int img_h);

struct LossComponents {
    double score_h = 0.0;
    double score_v = 0.0;
    double pixel = 0.0;
    double reg = 0.0;
};

/// score_h + delta_s * score_v + lambda_x * pixel + lambda_r * reg.
double total_loss(const LossComponents& c, const LossWeights& w,
                  long train_step, long total_steps);

} // namespace diffalign
