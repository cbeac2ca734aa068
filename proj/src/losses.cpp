#include "diffalign/losses.hpp"

#include "diffalign/errors.hpp"

#include <cmath>

namespace diffalign {

double LossWeights::delta_s(long train_step, long total_steps) const {
    if (!dynamic_s) return 1.0;
    return (4 * train_step < total_steps) ? 0.0 : 1.0;
}

double LossWeights::delta_x(int t, int T) const {
    if (!dynamic_x) return 1.0;
    const double f = static_cast<double>(T - t) / static_cast<double>(T);
    return f * f;
}

double LossWeights::delta_r(int t, int T) const {
    if (!dynamic_r) return delta_r_peak;
    const double f = static_cast<double>(t) / static_cast<double>(T);
    return delta_r_peak * f * f;
}

namespace {

double score_loss_impl(const Tensor& score_pred, const Tensor& z, int t,
                       const NoiseSchedule& sched) {
    if (!score_pred.same_shape(z))
        throw ShapeMismatch("loss_score: prediction and noise shapes differ");
    const double s = std::sqrt(1.0 - sched.alpha_bar_at(t));
    double acc = 0.0;
    for (std::size_t i = 0; i < score_pred.size(); ++i) {
        const double r = score_pred[i] + z[i] / s;
        acc += r * r;
    }
    return acc;
}

} // namespace

double loss_score_h(const Tensor& score_pred, const Tensor& z, int t,
                    const NoiseSchedule& sched) {
    return score_loss_impl(score_pred, z, t, sched);
}

double loss_score_v(const Tensor& score_pred, const Tensor& z, int t,
                    const NoiseSchedule& sched) {
    return score_loss_impl(score_pred, z, t, sched);
}

Tensor loss_score_grad(const Tensor& score_pred, const Tensor& z, int t,
                       const NoiseSchedule& sched) {
    if (!score_pred.same_shape(z))
        throw ShapeMismatch("loss_score_grad: prediction and noise shapes differ");
    const double s = std::sqrt(1.0 - sched.alpha_bar_at(t));
    Tensor g = score_pred;
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = 2.0 * (score_pred[i] + z[i] / s);
    return g;
}

double loss_pixel(const Homography& Ht, const Homography& H0,
                  const ImageBuffer& aligned, const ImageBuffer& dest,
                  const ValidityMask& mask, int t, int T, const LossWeights& w) {
    const PixelGrid pts = PixelGrid::lattice20(aligned.width, aligned.height);
    const double ph = p_norm_distance(Ht, H0, pts, 2.0);
    const double a = ncc(structure_map(aligned), structure_map(dest), mask);
    return w.delta_x(t, T) * ph - a;
}

double loss_reg(const Homography& Ht, const DisplacementField& vt,
                int t, int T, const LossWeights& w, int img_w, int img_h) {
    const PixelGrid pts = PixelGrid::lattice20(img_w, img_h);
    const double ph = p_norm_distance(Ht, Homography::identity(), pts, 2.0);
    return w.delta_r(t, T) * ph + smoothness_energy(vt);
}

double total_loss(const LossComponents& c, const LossWeights& w,
                  long train_step, long total_steps) {
    return c.score_h + w.delta_s(train_step, total_steps) * c.score_v
         + w.lambda_x * c.pixel + w.lambda_r * c.reg;
}

} // namespace diffalign
