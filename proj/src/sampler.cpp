#include "diffalign/sampler.hpp"

#include "diffalign/errors.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign {

namespace {

Tensor randn_tensor(std::vector<int> dims, Rng& rng) {
    Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.normal();
    return t;
}

DisplacementField field_from_state(const Tensor& v_state) {
    return DisplacementField::from_tensor(v_state);
}

void sample_field_clamped(const DisplacementField& f, double x, double y,
                          double* u, double* v) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
    int x0 = std::min(static_cast<int>(cx), f.width - 1);
    int y0 = std::min(static_cast<int>(cy), f.height - 1);
    const int x1 = std::min(x0 + 1, f.width - 1);
    const int y1 = std::min(y0 + 1, f.height - 1);
    const double fx = cx - x0, fy = cy - y0;
    *u = (1 - fy) * ((1 - fx) * f.u_at(x0, y0) + fx * f.u_at(x1, y0))
       + fy * ((1 - fx) * f.u_at(x0, y1) + fx * f.u_at(x1, y1));
    *v = (1 - fy) * ((1 - fx) * f.v_at(x0, y0) + fx * f.v_at(x1, y0))
       + fy * ((1 - fx) * f.v_at(x0, y1) + fx * f.v_at(x1, y1));
}

double tensor_norm(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data) acc += v * v;
    return std::sqrt(acc);
}

/// -NCC of structure maps after a composite warp; throws on degenerate
/// regions or projections.
double appearance_loss(const ImageBuffer& src, const Homography& H_raw,
                       const DisplacementField& v_full, const ImageBuffer& sm_dst) {
    const WarpResult wr = warp_composite(src, H_raw, v_full);
    return -ncc(structure_map(wr.image), sm_dst, wr.mask);
}

Tensor guidance_gradient(const Tensor& h_state, const DisplacementField& v_full,
                         const ImageBuffer& src, const ImageBuffer& sm_dst,
                         const SamplerConfig& cfg, bool* degenerate) {
    Tensor grad({9});
    *degenerate = false;
    const double fd = cfg.guidance.fd_step;
    for (int i = 0; i < 9; ++i) {
        Tensor plus = h_state, minus = h_state;
        plus[static_cast<std::size_t>(i)] += fd;
        minus[static_cast<std::size_t>(i)] -= fd;
        try {
            const double lp = appearance_loss(src, destandardize_h(plus, cfg), v_full, sm_dst);
            const double lm = appearance_loss(src, destandardize_h(minus, cfg), v_full, sm_dst);
            grad[static_cast<std::size_t>(i)] = (lp - lm) / (2.0 * fd);
        } catch (const DegenerateRegion&) {
            *degenerate = true;
        } catch (const DegenerateProjection&) {
            *degenerate = true;
        } catch (const SingularHomography&) {
            *degenerate = true;
        }
        if (*degenerate) {
            std::fill(grad.data.begin(), grad.data.end(), 0.0);
            return grad;
        }
    }
    return grad;
}

} // namespace

std::array<double, 9> standardize_h(const Homography& H, const SamplerConfig& cfg) {
    const Homography Hn = normalize(H);
    const Homography id = Homography::identity();
    std::array<double, 9> s{};
    for (std::size_t i = 0; i < 9; ++i)
        s[i] = (Hn.h[i] - id.h[i] - cfg.h_mean[i]) / cfg.h_std[i];
    return s;
}

Homography destandardize_h(const Tensor& state, const SamplerConfig& cfg) {
    const Homography id = Homography::identity();
    Homography H;
    for (std::size_t i = 0; i < 9; ++i)
        H.h[i] = id.h[i] + cfg.h_mean[i] + cfg.h_std[i] * state[i];
    return H;
}

Tensor guided_h_score(const Tensor& raw_score, const Tensor& h_state,
                      const DisplacementField& v_field, const ImageBuffer& src,
                      const ImageBuffer& dst, const SamplerConfig& cfg,
                      double* grad_norm_out, bool* degenerate_out) {
    if (grad_norm_out) *grad_norm_out = 0.0;
    if (degenerate_out) *degenerate_out = false;
    if (cfg.guidance.g_l == 0.0) return raw_score;

    const ImageBuffer sm_dst = structure_map(dst);
    const DisplacementField v_full = upsample_field(v_field, src.width, src.height);
    bool degenerate = false;
    const Tensor grad = guidance_gradient(h_state, v_full, src, sm_dst, cfg, &degenerate);
    if (degenerate_out) *degenerate_out = degenerate;
    if (grad_norm_out) *grad_norm_out = tensor_norm(grad);
    Tensor out = raw_score;
    for (std::size_t i = 0; i < 9; ++i)
        out[i] = raw_score[i] - cfg.guidance.g_l * grad[i];
    return out;
}

namespace {

struct AttemptResult {
    Tensor h_state;
    Tensor v_state;
    SampleTrace trace;
    Homography h_final_raw;
    DisplacementField v_full;
    WarpResult final_warp;
    double final_ncc = -1.0;
};

AttemptResult run_attempt(const ImageBuffer& src, const ImageBuffer& dst,
                          const ImageBuffer& sm_dst, const HScoreFn& h_score,
                          const VScoreFactory& v_factory, const SamplerConfig& cfg,
                          const NoiseSchedule& sched_h, const NoiseSchedule& sched_v,
                          Rng& rng, const Homography* h_gt) {
    AttemptResult ar;
    ar.h_state = randn_tensor({9}, rng);
    ar.v_state = randn_tensor({2, cfg.coarse_size, cfg.coarse_size}, rng);
    int t_v_cur = cfg.t_v;
    const PixelGrid pts = PixelGrid::lattice20(src.width, src.height);
    const Tensor zero9({9});
    const Tensor zero_field({2, cfg.coarse_size, cfg.coarse_size});

    for (int t = cfg.t_h; t >= 1; --t) {
        const Homography H_raw = destandardize_h(ar.h_state, cfg);
        const Homography H_norm = normalize(H_raw); // throws -> restart
        (void)invert(H_norm);                       // throws -> restart

        const WarpResult global = warp_global(src, H_raw);
        VScoreFn v_eval = v_factory(global.image);
        const Tensor s_v_first = (t_v_cur >= 1) ? v_eval(ar.v_state, t_v_cur) : Tensor();

        const DisplacementField v_full =
            upsample_field(field_from_state(ar.v_state), src.width, src.height);
        const WarpResult composite = warp_composite(src, H_raw, v_full);
        double ncc_t = -1.0;
        try {
            ncc_t = ncc(structure_map(composite.image), sm_dst, composite.mask);
        } catch (const DegenerateRegion&) {
            ncc_t = -1.0; // no measurable correlation at this step
        }

        const Tensor s_raw = h_score(ar.h_state, t);
        double grad_norm = 0.0;
        Tensor s_hat = s_raw;
        if (cfg.guidance.g_l != 0.0) {
            bool degenerate = false;
            const Tensor grad =
                guidance_gradient(ar.h_state, v_full, src, sm_dst, cfg, &degenerate);
            grad_norm = tensor_norm(grad);
            for (std::size_t i = 0; i < 9; ++i)
                s_hat[i] = s_raw[i] - cfg.guidance.g_l * grad[i];
        }

        TraceRecord rec;
        rec.t = t;
        rec.h = H_raw.h;
        rec.ncc = ncc_t;
        rec.guidance_grad_norm = grad_norm;
        if (h_gt) {
            try {
                rec.pnorm_to_gt = p_norm_distance(H_norm, *h_gt, pts, 2.0);
                rec.has_pnorm = true;
            } catch (const DegenerateProjection&) {
                rec.has_pnorm = false;
            }
        }
        ar.trace.records.push_back(rec);

        const Tensor z_h = (t > 1) ? randn_tensor({9}, rng) : zero9;
        ar.h_state = reverse_step(ar.h_state, s_hat, t, sched_h, z_h);

        for (int j = 0; j < cfg.interleave && t_v_cur >= 1; ++j) {
            const Tensor s_v = (j == 0) ? s_v_first : v_eval(ar.v_state, t_v_cur);
            const Tensor z_v = (t_v_cur > 1)
                ? randn_tensor({2, cfg.coarse_size, cfg.coarse_size}, rng)
                : zero_field;
            ar.v_state = reverse_step(ar.v_state, s_v, t_v_cur, sched_v, z_v);
            --t_v_cur;
        }
    }

    // flush leftover v steps when t_v is not an exact multiple of the
    // interleave budget, conditioned on the final warp
    if (t_v_cur >= 1) {
        const Homography H_raw = destandardize_h(ar.h_state, cfg);
        (void)normalize(H_raw);
        const WarpResult global = warp_global(src, H_raw);
        VScoreFn v_eval = v_factory(global.image);
        while (t_v_cur >= 1) {
            const Tensor s_v = v_eval(ar.v_state, t_v_cur);
            const Tensor z_v = (t_v_cur > 1)
                ? randn_tensor({2, cfg.coarse_size, cfg.coarse_size}, rng)
                : zero_field;
            ar.v_state = reverse_step(ar.v_state, s_v, t_v_cur, sched_v, z_v);
            --t_v_cur;
        }
    }

    ar.h_final_raw = destandardize_h(ar.h_state, cfg);
    const Homography H_final = normalize(ar.h_final_raw);
    (void)invert(H_final);
    ar.v_full = upsample_field(field_from_state(ar.v_state), src.width, src.height);
    ar.final_warp = warp_composite(src, ar.h_final_raw, ar.v_full);
    try {
        ar.final_ncc = ncc(structure_map(ar.final_warp.image), sm_dst, ar.final_warp.mask);
    } catch (const DegenerateRegion&) {
        ar.final_ncc = -1.0;
    }

    TraceRecord rec;
    rec.t = 0;
    rec.h = ar.h_final_raw.h;
    rec.ncc = ar.final_ncc;
    if (h_gt) {
        try {
            rec.pnorm_to_gt = p_norm_distance(H_final, *h_gt, pts, 2.0);
            rec.has_pnorm = true;
        } catch (const DegenerateProjection&) {
            rec.has_pnorm = false;
        }
    }
    ar.trace.records.push_back(rec);
    return ar;
}

} // namespace

AlignmentResult align(const ImageBuffer& src, const ImageBuffer& dst,
                      const HScoreFn& h_score, const VScoreFactory& v_factory,
                      const SamplerConfig& cfg, Rng& rng, const Homography* h_gt) {
    const NoiseSchedule sched_h = make_schedule(cfg.t_h, cfg.beta_min, cfg.beta_max);
    const NoiseSchedule sched_v = make_schedule(cfg.t_v, cfg.beta_min, cfg.beta_max);
    const ImageBuffer sm_dst = structure_map(dst);

    AlignmentResult res;
    for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
        res.restarts = attempt;
        try {
            AttemptResult ar = run_attempt(src, dst, sm_dst, h_score, v_factory, cfg,
                                           sched_h, sched_v, rng, h_gt);
            res.failed = false;
            res.h = normalize(ar.h_final_raw);
            res.v = std::move(ar.v_full);
            res.warped = std::move(ar.final_warp.image);
            res.mask = std::move(ar.final_warp.mask);
            res.trace = std::move(ar.trace);
            res.final_ncc = ar.final_ncc;
            if (h_gt) {
                const PixelGrid pts = PixelGrid::lattice20(src.width, src.height);
                res.pnorm_to_gt = p_norm_distance(res.h, *h_gt, pts, 2.0);
                res.has_pnorm = true;
            }
            return res;
        } catch (const DegenerateProjection&) {
            continue; // fresh noise
        } catch (const SingularHomography&) {
            continue;
        }
    }
    res.failed = true;
    return res;
}

namespace {

DisplacementField compose_fields(const Homography& H2_norm,
                                 const DisplacementField& v2_full,
                                 const DisplacementField& v1_full) {
    // total map: p -> H2^-1(p + v2(p)) =: q, then q -> q + v1(q) in the
    // previous round's frame; expressed as one (H2*H1, v_total) pair via
    // v_total(p) = H2(q + v1(q)) - p
    const Homography H2_inv = invert(H2_norm);
    DisplacementField out(v2_full.width, v2_full.height);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * out.width + x;
            const Point2 p{static_cast<double>(x), static_cast<double>(y)};
            try {
                const Point2 q = apply_homography(
                    H2_inv, {p.x + v2_full.u[i], p.y + v2_full.v[i]});
                double u1 = 0.0, w1 = 0.0;
                sample_field_clamped(v1_full, q.x, q.y, &u1, &w1);
                const Point2 r = apply_homography(H2_norm, {q.x + u1, q.y + w1});
                out.u[i] = r.x - p.x;
                out.v[i] = r.y - p.y;
            } catch (const DegenerateProjection&) {
                out.u[i] = v2_full.u[i];
                out.v[i] = v2_full.v[i];
            }
        }
    return out;
}

} // namespace

AlignmentResult align_iterative(const ImageBuffer& src, const ImageBuffer& dst,
                                const ScoreProvider& provider, const SamplerConfig& cfg,
                                int n_iter, Rng& rng, const Homography* h_gt) {
    if (n_iter < 1)
        throw InvalidParameter("align_iterative: n_iter must be >= 1");

    Homography h_accum = Homography::identity();
    DisplacementField v_accum;
    AlignmentResult last;
    const ImageBuffer* round_src = &src;
    ImageBuffer round_src_storage;

    for (int round = 1; round <= n_iter; ++round) {
        RoundScores scores = provider(*round_src, h_accum, round);
        AlignmentResult r = align(*round_src, dst, scores.h_score, scores.v_factory, cfg, rng,
                                  round == 1 ? h_gt : nullptr);
        if (r.failed) {
            r.restarts += last.restarts;
            return r;
        }
        if (round == 1) {
            h_accum = r.h;
            v_accum = r.v;
            last = std::move(r);
        } else {
            v_accum = compose_fields(r.h, r.v, v_accum);
            h_accum = compose(r.h, h_accum);
            last.trace = std::move(r.trace);
            last.restarts += r.restarts;
        }
        if (round < n_iter) {
            round_src_storage = (round == 1) ? last.warped : r.warped;
            round_src = &round_src_storage;
        }
    }

    if (n_iter == 1) return last;

    AlignmentResult res;
    res.failed = false;
    res.h = h_accum;
    res.v = v_accum;
    WarpResult total = warp_composite(src, h_accum, v_accum);
    res.warped = std::move(total.image);
    res.mask = std::move(total.mask);
    res.trace = std::move(last.trace);
    res.restarts = last.restarts;
    try {
        res.final_ncc = ncc(structure_map(res.warped), structure_map(dst), res.mask);
    } catch (const DegenerateRegion&) {
        res.final_ncc = -1.0;
    }
    if (h_gt) {
        const PixelGrid pts = PixelGrid::lattice20(src.width, src.height);
        res.pnorm_to_gt = p_norm_distance(res.h, *h_gt, pts, 2.0);
        res.has_pnorm = true;
    }
    return res;
}

RoundScores oracle_scores(const Homography& h_gt, const DisplacementField& v_gt,
                          const SamplerConfig& cfg) {
    const NoiseSchedule sched_h = make_schedule(cfg.t_h, cfg.beta_min, cfg.beta_max);
    const NoiseSchedule sched_v = make_schedule(cfg.t_v, cfg.beta_min, cfg.beta_max);

    const std::array<double, 9> s = standardize_h(h_gt, cfg);
    Tensor x0({9});
    for (std::size_t i = 0; i < 9; ++i) x0[i] = s[i];

    DisplacementField coarse = v_gt;
    if (coarse.width != cfg.coarse_size || coarse.height != cfg.coarse_size)
        coarse = upsample_field(coarse, cfg.coarse_size, cfg.coarse_size);
    const Tensor v0 = coarse.to_tensor();

    RoundScores rs;
    rs.h_score = [x0, sched_h](const Tensor& state, int t) {
        return oracle_score(state, x0, t, sched_h);
    };
    rs.v_factory = [v0, sched_v](const ImageBuffer&) {
        return [v0, sched_v](const Tensor& state, int t) {
            return oracle_score(state, v0, t, sched_v);
        };
    };
    return rs;
}

double calibrate_guidance(const std::vector<const ImageBuffer*>& srcs,
                          const std::vector<const ImageBuffer*>& dsts,
                          const std::function<RoundScores(int pair_index)>& scores,
                          const SamplerConfig& cfg, double fraction, std::uint64_t seed) {
    const NoiseSchedule sched_h = make_schedule(cfg.t_h, cfg.beta_min, cfg.beta_max);
    const NoiseSchedule sched_v = make_schedule(cfg.t_v, cfg.beta_min, cfg.beta_max);
    const int t_mid = std::max(1, cfg.t_h / 2);

    std::vector<double> score_norms, grad_norms;
    for (std::size_t k = 0; k < srcs.size(); ++k) {
        Rng rng(Rng::derive(seed, k));
        const ImageBuffer& src = *srcs[k];
        const ImageBuffer& dst = *dsts[k];
        const ImageBuffer sm_dst = structure_map(dst);
        RoundScores rs = scores(static_cast<int>(k));

        Tensor h_state = randn_tensor({9}, rng);
        Tensor v_state = randn_tensor({2, cfg.coarse_size, cfg.coarse_size}, rng);
        int t_v_cur = cfg.t_v;
        try {
            for (int t = cfg.t_h; t >= t_mid; --t) {
                const Homography H_raw = destandardize_h(h_state, cfg);
                (void)normalize(H_raw);
                const WarpResult global = warp_global(src, H_raw);
                VScoreFn v_eval = rs.v_factory(global.image);
                const Tensor s_raw = rs.h_score(h_state, t);
                if (t == t_mid) {
                    const DisplacementField v_full = upsample_field(
                        field_from_state(v_state), src.width, src.height);
                    bool degenerate = false;
                    const Tensor grad = guidance_gradient(h_state, v_full, src, sm_dst,
                                                          cfg, &degenerate);
                    if (!degenerate) {
                        score_norms.push_back(tensor_norm(s_raw));
                        grad_norms.push_back(tensor_norm(grad));
                    }
                    break;
                }
                const Tensor z_h = (t > 1) ? randn_tensor({9}, rng) : Tensor({9});
                h_state = reverse_step(h_state, s_raw, t, sched_h, z_h);
                for (int j = 0; j < cfg.interleave && t_v_cur >= 1; ++j) {
                    const Tensor s_v = v_eval(v_state, t_v_cur);
                    const Tensor z_v = (t_v_cur > 1)
                        ? randn_tensor({2, cfg.coarse_size, cfg.coarse_size}, rng)
                        : Tensor({2, cfg.coarse_size, cfg.coarse_size});
                    v_state = reverse_step(v_state, s_v, t_v_cur, sched_v, z_v);
                    --t_v_cur;
                }
            }
        } catch (const DegenerateProjection&) {
        } catch (const SingularHomography&) {
        }
    }
    if (score_norms.empty() || grad_norms.empty()) return 0.0;
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double ms = median(score_norms);
    const double mg = median(grad_norms);
    if (mg <= 0.0) return 0.0;
    return fraction * ms / mg;
}

} // namespace diffalign
