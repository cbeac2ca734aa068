#pragma once

#include "diffalign/tensor.hpp"

#include <functional>
#include <vector>

namespace diffalign {

/// Per-step variances beta_t with the derived cumulative products
/// alpha_bar[t] = prod_{j<=t} (1 - beta_j). Step indices are 1-based in
/// the chain equations; beta(t) / alpha_bar(t) accept t in [1, T].
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // size T
    std::vector<double> alpha_bar; // size T

    double beta_at(int t) const { return beta[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar_at(int t) const { return alpha_bar[static_cast<std::size_t>(t - 1)]; }
};

/// Linear beta interpolation from beta_min to beta_max over T steps.
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z, t in [1, T].
Tensor perturb_forward(const Tensor& x0, int t, const NoiseSchedule& sched, const Tensor& z);

/// Closed-form score of the Gaussian perturbation kernel:
/// -(x_t - sqrt(alpha_bar_t) x0) / (1 - alpha_bar_t).
Tensor oracle_score(const Tensor& xt, const Tensor& x0, int t, const NoiseSchedule& sched);

/// Reverse Markov step, shared by both chains:
/// x_{t-1} = x_t / sqrt(1 - beta_t) + beta_t * score + sqrt(beta_t) * z.
/// Callers force z = 0 at t = 1.
Tensor reverse_step(const Tensor& xt, const Tensor& score, int t,
                    const NoiseSchedule& sched, const Tensor& z);

/// x_{t+1} = x_t + eps * score + sqrt(2 eps) * z. Kept as the
/// annealed-dynamics ablation path next to the scheduled reverse step.
Tensor langevin_step(const Tensor& xt, const Tensor& score, double eps, const Tensor& z);

/// Score evaluator: state and step in, score of the same shape out.
using ScoreFn = std::function<Tensor(const Tensor& state, int t)>;

} // namespace diffalign
