#include "diffalign/diffusion.hpp"

#include "diffalign/errors.hpp"

#include <cmath>

namespace diffalign {

namespace {

void check_step(int t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw InvalidParameter("diffusion: step index out of range");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(what) + ": tensor shapes differ");
}

} // namespace

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 1 || beta_min <= 0.0 || beta_max >= 1.0 || beta_min > beta_max)
        throw InvalidParameter("make_schedule: need T >= 1 and 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double f = (T > 1) ? static_cast<double>(t) / (T - 1) : 0.0;
        const double b = beta_min + f * (beta_max - beta_min);
        s.beta[static_cast<std::size_t>(t)] = b;
        prod *= (1.0 - b);
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

Tensor perturb_forward(const Tensor& x0, int t, const NoiseSchedule& sched, const Tensor& z) {
    check_step(t, sched);
    check_same_shape(x0, z, "perturb_forward");
    const double ab = sched.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double cz = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = c0 * x0[i] + cz * z[i];
    return out;
}

Tensor oracle_score(const Tensor& xt, const Tensor& x0, int t, const NoiseSchedule& sched) {
    check_step(t, sched);
    check_same_shape(xt, x0, "oracle_score");
    const double ab = sched.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double inv_var = 1.0 / (1.0 - ab);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = -(xt[i] - c0 * x0[i]) * inv_var;
    return out;
}

Tensor reverse_step(const Tensor& xt, const Tensor& score, int t,
                    const NoiseSchedule& sched, const Tensor& z) {
    check_step(t, sched);
    check_same_shape(xt, score, "reverse_step");
    check_same_shape(xt, z, "reverse_step");
    const double b = sched.beta_at(t);
    const double c = 1.0 / std::sqrt(1.0 - b);
    const double sb = std::sqrt(b);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = c * xt[i] + b * score[i] + sb * z[i];
    return out;
}

Tensor langevin_step(const Tensor& xt, const Tensor& score, double eps, const Tensor& z) {
    if (eps < 0.0)
        throw InvalidParameter("langevin_step: eps must be >= 0");
    check_same_shape(xt, score, "langevin_step");
    check_same_shape(xt, z, "langevin_step");
    const double sn = std::sqrt(2.0 * eps);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xt[i] + eps * score[i] + sn * z[i];
    return out;
}

} // namespace diffalign
