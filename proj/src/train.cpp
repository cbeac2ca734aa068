#include "diffalign/train.hpp"

#include "diffalign/dataset.hpp"
#include "diffalign/errors.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace diffalign {

namespace {

Tensor standardize_residual(const Homography& H, const std::array<double, 9>& mean,
                            const std::array<double, 9>& stddev) {
    const Homography Hn = normalize(H);
    const Homography id = Homography::identity();
    Tensor out({9});
    for (std::size_t i = 0; i < 9; ++i)
        out[i] = (Hn.h[i] - id.h[i] - mean[i]) / stddev[i];
    return out;
}

Homography destandardize_residual(const Tensor& state, const std::array<double, 9>& mean,
                                  const std::array<double, 9>& stddev) {
    const Homography id = Homography::identity();
    Homography H;
    for (std::size_t i = 0; i < 9; ++i)
        H.h[i] = id.h[i] + mean[i] + stddev[i] * state[i];
    return H;
}

Tensor randn(std::vector<int> dims, Rng& rng) {
    Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.normal();
    return t;
}

void scale_tensor(Tensor& t, double s) {
    for (double& v : t.data) v *= s;
}

} // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<PairSample>& dataset,
                  const std::string& config_hash, const std::string& resume_checkpoint) {
    if (dataset.empty())
        throw EmptyInput("train: dataset is empty");
    if (cfg.batch_size < 1 || cfg.batch_size > 4)
        throw InvalidParameter("train: batch_size must be in [1,4]");
    std::filesystem::create_directories(cfg.out_dir);

    const NoiseSchedule sched_h = make_schedule(cfg.t_h, cfg.beta_min, cfg.beta_max);
    const NoiseSchedule sched_v = make_schedule(cfg.t_v, cfg.beta_min, cfg.beta_max);

    ModelBundle bundle(cfg.h_cfg, cfg.v_cfg);
    long start_step = 0;
    if (!resume_checkpoint.empty()) {
        bundle = load_checkpoint(resume_checkpoint);
        start_step = bundle.train_step;
    } else {
        Rng init_rng(Rng::derive(cfg.seed, 0xd1f5));
        bundle.h_net.init_params(init_rng);
        bundle.v_net.init_params(init_rng);
        bundle.sched_h = sched_h;
        bundle.sched_v = sched_v;
        std::vector<Homography> hs;
        hs.reserve(dataset.size());
        for (const auto& p : dataset) hs.push_back(p.h_gt);
        residual_stats(hs, bundle.h_mean, bundle.h_std);
    }

    const std::string log_path = cfg.out_dir + "/train_log.csv";
    const bool append = !resume_checkpoint.empty() && std::filesystem::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IOError("train: cannot open " + log_path);
    if (!append)
        log << "step,loss_score_h,loss_score_v,loss_pixel,loss_reg,total\n";

    const int n = static_cast<int>(dataset.size());
    double last_total = 0.0;

    for (long step = start_step; step < cfg.steps; ++step) {
        Rng rng(Rng::derive(cfg.seed, 0x7a11 + static_cast<std::uint64_t>(step)));
        const double ds = cfg.weights.delta_s(step, cfg.steps);

        bundle.h_net.params().zero_grads();
        bundle.v_net.params().zero_grads();
        LossComponents acc;

        for (int b = 0; b < cfg.batch_size; ++b) {
            bool done = false;
            for (int retry = 0; retry < 8 && !done; ++retry) {
                const PairSample& pair = dataset[static_cast<std::size_t>(rng.uniform_int(n))];
                const int t_h = 1 + rng.uniform_int(cfg.t_h);
                const int t_v = 1 + rng.uniform_int(cfg.t_v);
                const Tensor x0_h = standardize_residual(pair.h_gt, bundle.h_mean, bundle.h_std);
                const Tensor z_h = randn({9}, rng);
                const Tensor h_t = perturb_forward(x0_h, t_h, sched_h, z_h);

                DisplacementField v_gt = pair.v_gt;
                if (v_gt.width != cfg.coarse_size || v_gt.height != cfg.coarse_size)
                    v_gt = upsample_field(v_gt, cfg.coarse_size, cfg.coarse_size);
                const Tensor v0 = v_gt.to_tensor();
                const Tensor z_v = randn({2, cfg.coarse_size, cfg.coarse_size}, rng);
                const Tensor v_t = perturb_forward(v0, t_v, sched_v, z_v);

                try {
                    const Homography h_t_raw =
                        destandardize_residual(h_t, bundle.h_mean, bundle.h_std);
                    const Homography& h_warp = cfg.warp_with_clean_h ? pair.h_gt : h_t_raw;
                    const WarpResult warped = warp_global(pair.src, h_warp);

                    const Tensor score_h =
                        bundle.h_net.forward_train(pair.src, pair.dst, h_t, t_h);
                    acc.score_h += loss_score_h(score_h, z_h, t_h, sched_h) / cfg.batch_size;
                    Tensor dh = loss_score_grad(score_h, z_h, t_h, sched_h);
                    scale_tensor(dh, 1.0 / cfg.batch_size);
                    bundle.h_net.backward(dh);

                    if (ds > 0.0) {
                        const Tensor score_v =
                            bundle.v_net.forward_train(warped.image, pair.dst, v_t, t_v);
                        acc.score_v += loss_score_v(score_v, z_v, t_v, sched_v) / cfg.batch_size;
                        Tensor dv = loss_score_grad(score_v, z_v, t_v, sched_v);
                        scale_tensor(dv, ds / cfg.batch_size);
                        bundle.v_net.backward(dv);
                    } else {
                        const Tensor score_v =
                            bundle.v_net.forward(warped.image, pair.dst, v_t, t_v);
                        acc.score_v += loss_score_v(score_v, z_v, t_v, sched_v) / cfg.batch_size;
                    }

                    const WarpResult aligned = warp_composite(pair.src, h_t_raw,
                                                              DisplacementField::from_tensor(v_t));
                    double lp;
                    try {
                        lp = loss_pixel(h_t_raw, pair.h_gt, aligned.image, pair.dst,
                                        aligned.mask, t_h, cfg.t_h, cfg.weights);
                    } catch (const DegenerateRegion&) {
                        // appearance term unavailable on this draw
                        lp = cfg.weights.delta_x(t_h, cfg.t_h)
                           * p_norm_distance(h_t_raw, pair.h_gt,
                                             PixelGrid::lattice20(pair.src.width, pair.src.height),
                                             2.0);
                    }
                    acc.pixel += lp / cfg.batch_size;
                    acc.reg += loss_reg(h_t_raw, DisplacementField::from_tensor(v_t), t_h,
                                        cfg.t_h, cfg.weights, pair.src.width, pair.src.height)
                             / cfg.batch_size;
                    done = true;
                } catch (const DegenerateProjection&) {
                    continue; // perturbed homography unusable; redraw
                } catch (const SingularHomography&) {
                    continue;
                }
            }
            if (!done)
                throw DivergedTraining("train: degenerate perturbations at step "
                                       + std::to_string(step));
        }

        const double total = total_loss(acc, cfg.weights, step, cfg.steps);
        if (!std::isfinite(total))
            throw DivergedTraining("train: non-finite loss at step " + std::to_string(step));
        last_total = total;

        adamw_step(bundle.h_net.params(), cfg.adam);
        if (ds > 0.0)
            adamw_step(bundle.v_net.params(), cfg.adam);

        char row[256];
        std::snprintf(row, sizeof(row), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      step, acc.score_h, acc.score_v, acc.pixel, acc.reg, total);
        log << row;

        bundle.train_step = step + 1;
        if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 &&
            step + 1 < cfg.steps) {
            save_checkpoint(cfg.out_dir + "/checkpoint_" + std::to_string(step + 1) + ".ckpt",
                            bundle, config_hash);
        }
    }
    log.flush();

    const std::string final_path = cfg.out_dir + "/checkpoint_final.ckpt";
    save_checkpoint(final_path, bundle, config_hash);

    TrainResult res;
    res.checkpoint_path = final_path;
    res.log_path = log_path;
    res.steps_run = cfg.steps - start_step;
    res.last_total = last_total;
    return res;
}

} // namespace diffalign
