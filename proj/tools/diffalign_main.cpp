// diffalign: diffusion-based image alignment toolkit.
//
// Subcommands: gen-data, train, align, eval, ablate, gradcheck.
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
// 3 acceptance/gradcheck failure.

#include "diffalign/config.hpp"
#include "diffalign/dataset.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/eval.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace diffalign;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t pair_seed(std::uint64_t base_seed, const std::string& pair_id) {
    return Rng::derive(base_seed, fnv1a(pair_id));
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ------------------------------------------------------------- gen-data

int cmd_gen_data(const RunConfig& cfg) {
    if (cfg.n_pairs <= 0)
        throw InvalidConfig("gen-data: n_pairs must be > 0");
    if (cfg.output_dir.empty())
        throw InvalidConfig("gen-data: output_dir required");
    fs::create_directories(cfg.output_dir);
    const std::string hash = config_hash(cfg);
    const TransformRange range = cfg.transform_range();
    const DegradeSpec deg = cfg.degrade_spec();

    for (int i = 0; i < cfg.n_pairs; ++i) {
        const std::uint64_t seed_i = Rng::derive(cfg.seed, static_cast<std::uint64_t>(i));
        Rng base_rng(Rng::derive(seed_i, 1));
        const ImageBuffer base =
            make_base_image(base_pattern_for_index(i), cfg.image_size, base_rng);
        const PairSample pair =
            generate_pair(base, range, cfg.deform_amplitude, cfg.coarse_size, deg, seed_i);
        save_pair(cfg.output_dir, pair_id(i), pair, hash);
    }

    json manifest;
    manifest["n_pairs"] = cfg.n_pairs;
    manifest["seed"] = cfg.seed;
    manifest["image_size"] = cfg.image_size;
    manifest["coarse_size"] = cfg.coarse_size;
    manifest["config_hash"] = hash;
    std::ofstream mf(cfg.output_dir + "/dataset.json");
    mf << manifest.dump(2) << "\n";
    write_effective_config(cfg.output_dir, cfg);
    std::cout << "gen-data: wrote " << cfg.n_pairs << " pairs to " << cfg.output_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const RunConfig& cfg, const std::string& resume) {
    if (cfg.dataset_dir.empty())
        throw InvalidConfig("train: dataset_dir required");
    if (cfg.output_dir.empty())
        throw InvalidConfig("train: output_dir required");
    const std::vector<PairSample> dataset = load_dataset(cfg.dataset_dir);
    write_effective_config(cfg.output_dir, cfg);
    const TrainResult r = train(cfg.train_config(), dataset, config_hash(cfg), resume);
    std::cout << "train: " << r.steps_run << " steps, final checkpoint "
              << r.checkpoint_path << "\n";
    return 0;
}

// ---------------------------------------------------------------- align

struct PairScoreSource {
    // either oracle scores (per pair gt) or a shared model bundle
    bool oracle = false;
    const ModelBundle* bundle = nullptr;
};

ScoreProvider make_provider(const PairScoreSource& src, const PairSample& pair,
                            const SamplerConfig& scfg) {
    if (src.oracle) {
        const Homography h_gt = pair.h_gt;
        const DisplacementField v_gt = pair.v_gt;
        const int coarse = scfg.coarse_size;
        return [h_gt, v_gt, scfg, coarse](const ImageBuffer&, const Homography& h_accum,
                                          int round) {
            if (round == 1) return oracle_scores(h_gt, v_gt, scfg);
            // residual ground truth for the re-aligned source
            const Homography resid = compose(h_gt, invert(h_accum));
            return oracle_scores(resid, DisplacementField(coarse, coarse), scfg);
        };
    }
    const ModelBundle* bundle = src.bundle;
    const ImageBuffer* dst = &pair.dst;
    return [bundle, dst](const ImageBuffer& round_src, const Homography&, int) {
        RoundScores rs;
        auto enc_src = std::make_shared<Tensor>(bundle->h_net.encode(round_src));
        auto enc_dst = std::make_shared<Tensor>(bundle->h_net.encode(*dst));
        const HomographyScoreNet* h_net = &bundle->h_net;
        rs.h_score = [h_net, enc_src, enc_dst](const Tensor& state, int t) {
            return h_net->forward_cached(*enc_src, *enc_dst, state, t);
        };
        const DisplacementScoreNet* v_net = &bundle->v_net;
        const ImageBuffer* d = dst;
        rs.v_factory = [v_net, d](const ImageBuffer& warped) {
            auto cond = std::make_shared<Tensor>(v_net->prepare_condition(warped, *d));
            return [v_net, cond](const Tensor& state, int t) {
                return v_net->forward_cond(*cond, state, t);
            };
        };
        return rs;
    };
}

void write_alignment_artifacts(const std::string& out_dir, const std::string& id,
                               const AlignmentResult& res, std::uint64_t seed,
                               const std::string& hash, const std::string& fail_reason) {
    json manifest;
    manifest["pair_id"] = id;
    manifest["failed"] = res.failed;
    manifest["seed"] = seed;
    manifest["config_hash"] = hash;
    manifest["restarts"] = res.restarts;
    if (!fail_reason.empty()) manifest["reason"] = fail_reason;
    if (!res.failed) {
        manifest["h"] = res.h.h;
        manifest["v_tensor"] = id + "_v.admt";
        manifest["warped"] = id + "_warped.pgm";
        manifest["mask"] = id + "_mask.pgm";
        manifest["trace"] = id + "_trace.csv";
        manifest["final_ncc"] = res.final_ncc;
        if (res.has_pnorm)
            manifest["pnorm_to_gt"] = res.pnorm_to_gt;
        else
            manifest["pnorm_to_gt"] = nullptr;

        save_tensor(out_dir + "/" + id + "_v.admt", res.v.to_tensor());
        save_pnm(out_dir + "/" + id + "_warped.pgm", res.warped);
        save_mask_pgm(out_dir + "/" + id + "_mask.pgm", res.mask);

        std::ofstream tf(out_dir + "/" + id + "_trace.csv");
        tf << "t,h0,h1,h2,h3,h4,h5,h6,h7,h8,ncc,guidance_grad_norm\n";
        for (const auto& rec : res.trace.records) {
            tf << rec.t;
            for (double h : rec.h) tf << "," << fmt(h);
            tf << "," << fmt(rec.ncc) << "," << fmt(rec.guidance_grad_norm) << "\n";
        }
    }
    std::ofstream mf(out_dir + "/" + id + ".result.json");
    mf << manifest.dump(2) << "\n";
}

int cmd_align(const RunConfig& cfg, const std::string& only_pair) {
    if (cfg.dataset_dir.empty())
        throw InvalidConfig("align: dataset_dir required");
    if (cfg.output_dir.empty())
        throw InvalidConfig("align: output_dir required");
    if (!cfg.oracle && cfg.checkpoint.empty())
        throw MissingCheckpoint("align: need --checkpoint or --oracle");

    std::vector<std::string> ids = list_pair_ids(cfg.dataset_dir);
    if (!only_pair.empty()) {
        if (std::find(ids.begin(), ids.end(), only_pair) == ids.end())
            throw IOError("align: pair not found: " + only_pair);
        ids = {only_pair};
    }
    fs::create_directories(cfg.output_dir);
    write_effective_config(cfg.output_dir, cfg);
    const std::string hash = config_hash(cfg);

    std::optional<ModelBundle> bundle;
    SamplerConfig scfg = cfg.sampler_config();
    if (cfg.oracle) {
        // standardization from the suite's ground truth, mirroring the
        // training-set statistics mechanism
        std::vector<Homography> hs;
        for (const auto& id : ids) hs.push_back(load_pair(cfg.dataset_dir, id).h_gt);
        std::array<double, 9> mean{}, stddev{};
        residual_stats(hs, mean, stddev);
        scfg.h_mean = mean;
        scfg.h_std = stddev;
    } else {
        bundle.emplace(load_checkpoint(cfg.checkpoint));
        scfg.h_mean = bundle->h_mean;
        scfg.h_std = bundle->h_std;
    }

    PairScoreSource source;
    source.oracle = cfg.oracle;
    source.bundle = bundle ? &*bundle : nullptr;

    const int n = static_cast<int>(ids.size());
    std::vector<PairSample> pairs(static_cast<std::size_t>(n));
    std::vector<std::string> load_errors(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        try {
            pairs[static_cast<std::size_t>(i)] = load_pair(cfg.dataset_dir, ids[static_cast<std::size_t>(i)]);
        } catch (const std::exception& e) {
            load_errors[static_cast<std::size_t>(i)] = e.what();
        }
    }

#ifdef _OPENMP
    omp_set_num_threads(cfg.jobs);
#endif
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const std::string& id = ids[static_cast<std::size_t>(i)];
        const std::uint64_t seed = pair_seed(cfg.seed, id);
        if (!load_errors[static_cast<std::size_t>(i)].empty()) {
            AlignmentResult failed;
            failed.failed = true;
            write_alignment_artifacts(cfg.output_dir, id, failed, seed, hash,
                                      load_errors[static_cast<std::size_t>(i)]);
            continue;
        }
        const PairSample& pair = pairs[static_cast<std::size_t>(i)];
        Rng rng(seed);
        std::string reason;
        AlignmentResult res;
        try {
            const ScoreProvider provider = make_provider(source, pair, scfg);
            res = align_iterative(pair.src, pair.dst, provider, scfg, cfg.n_iter, rng,
                                  &pair.h_gt);
        } catch (const std::exception& e) {
            res.failed = true;
            reason = e.what();
        }
        write_alignment_artifacts(cfg.output_dir, id, res, seed, hash, reason);
    }
    std::cout << "align: processed " << n << " pairs into " << cfg.output_dir << "\n";
    return 0;
}

// ----------------------------------------------------------------- eval

struct LoadedResult {
    bool failed = true;
    Homography h;
    DisplacementField v;
};

LoadedResult load_result(const std::string& dir, const std::string& id) {
    LoadedResult r;
    std::ifstream f(dir + "/" + id + ".result.json");
    if (!f) throw IOError("eval: missing result manifest for " + id);
    json j = json::parse(f);
    r.failed = j["failed"];
    if (!r.failed) {
        for (std::size_t i = 0; i < 9; ++i) r.h.h[i] = j["h"][i];
        r.v = DisplacementField::from_tensor(
            load_tensor(dir + "/" + j["v_tensor"].get<std::string>()));
    }
    return r;
}

std::vector<std::string> list_result_ids(const std::string& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir))
        throw IOError("eval: not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const std::string suffix = ".result.json";
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

int cmd_eval(const RunConfig& cfg, const std::string& results_dir, const std::string& gt_dir,
             const std::string& out_dir) {
    const std::vector<std::string> rids = list_result_ids(results_dir);
    const std::vector<std::string> gids = list_pair_ids(gt_dir);
    if (rids.empty())
        throw EmptyInput("eval: no results in " + results_dir);
    if (rids != gids)
        throw MismatchedPairs("eval: result ids do not match ground-truth ids");

    std::vector<PairEvalRecord> records;
    for (const auto& id : rids) {
        const PairSample gt = load_pair(gt_dir, id);
        const LoadedResult pred = load_result(results_dir, id);
        if (pred.failed) {
            records.push_back(evaluate_pair(id, nullptr, nullptr, gt.h_gt, gt.v_gt,
                                            gt.src.width, gt.src.height));
        } else {
            records.push_back(evaluate_pair(id, &pred.h, &pred.v, gt.h_gt, gt.v_gt,
                                            gt.src.width, gt.src.height));
        }
    }
    fs::create_directories(out_dir);
    write_eval_csv(out_dir + "/eval.csv", records);
    const SuiteReport rep = report(records);
    write_summary_json(out_dir + "/eval_summary.json", rep, config_hash(cfg));
    std::cout << "eval: n=" << rep.n << " Failed=" << rep.failed_pct
              << "% Acceptable=" << rep.acceptable_pct << "% Inaccurate="
              << rep.inaccurate_pct << "% mAUC=" << rep.mauc << "\n";
    return 0;
}

// --------------------------------------------------------------- ablate

struct SuiteRun {
    std::vector<PairEvalRecord> records;
    std::vector<double> final_ncc;   // per pair (failed -> -1)
    std::vector<double> pnorm;       // per pair (failed -> inf)
};

SuiteRun run_suite(const std::vector<PairSample>& pairs, const std::vector<std::string>& ids,
                   const PairScoreSource& source, const SamplerConfig& scfg, int n_iter,
                   std::uint64_t base_seed, int jobs) {
    const int n = static_cast<int>(pairs.size());
    SuiteRun out;
    out.records.resize(static_cast<std::size_t>(n));
    out.final_ncc.assign(static_cast<std::size_t>(n), -1.0);
    out.pnorm.assign(static_cast<std::size_t>(n),
                     std::numeric_limits<double>::infinity());
#ifdef _OPENMP
    omp_set_num_threads(jobs);
#endif
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const PairSample& pair = pairs[static_cast<std::size_t>(i)];
        Rng rng(pair_seed(base_seed, ids[static_cast<std::size_t>(i)]));
        AlignmentResult res;
        try {
            const ScoreProvider provider = make_provider(source, pair, scfg);
            res = align_iterative(pair.src, pair.dst, provider, scfg, n_iter, rng,
                                  &pair.h_gt);
        } catch (const std::exception&) {
            res.failed = true;
        }
        PairEvalRecord rec;
        if (res.failed) {
            rec = evaluate_pair(ids[static_cast<std::size_t>(i)], nullptr, nullptr,
                                pair.h_gt, pair.v_gt, pair.src.width, pair.src.height);
        } else {
            rec = evaluate_pair(ids[static_cast<std::size_t>(i)], &res.h, &res.v,
                                pair.h_gt, pair.v_gt, pair.src.width, pair.src.height);
            out.final_ncc[static_cast<std::size_t>(i)] = res.final_ncc;
            if (res.has_pnorm) out.pnorm[static_cast<std::size_t>(i)] = res.pnorm_to_gt;
        }
        out.records[static_cast<std::size_t>(i)] = std::move(rec);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

int cmd_ablate(const RunConfig& cfg, const std::string& axis) {
    if (cfg.dataset_dir.empty())
        throw InvalidConfig("ablate: dataset_dir required");
    if (cfg.output_dir.empty())
        throw InvalidConfig("ablate: output_dir required");
    fs::create_directories(cfg.output_dir);
    write_effective_config(cfg.output_dir, cfg);
    const std::string hash = config_hash(cfg);

    const std::vector<std::string> ids = list_pair_ids(cfg.dataset_dir);
    std::vector<PairSample> pairs;
    for (const auto& id : ids) pairs.push_back(load_pair(cfg.dataset_dir, id));

    std::optional<ModelBundle> bundle;
    SamplerConfig scfg = cfg.sampler_config();
    PairScoreSource source;
    source.oracle = cfg.oracle;
    if (cfg.oracle) {
        std::vector<Homography> hs;
        for (const auto& p : pairs) hs.push_back(p.h_gt);
        residual_stats(hs, scfg.h_mean, scfg.h_std);
    } else {
        if (cfg.checkpoint.empty())
            throw MissingCheckpoint("ablate: need --checkpoint or --oracle");
        bundle.emplace(load_checkpoint(cfg.checkpoint));
        scfg.h_mean = bundle->h_mean;
        scfg.h_std = bundle->h_std;
        source.bundle = &*bundle;
    }

    json summary;
    summary["axis"] = axis;
    summary["config_hash"] = hash;
    std::ofstream csv(cfg.output_dir + "/ablate_" + axis + ".csv");

    if (axis == "guidance") {
        SamplerConfig on = scfg;
        if (on.guidance.g_l == 0.0) {
            // calibrate so the guidance term sits near 10% of the score norm
            std::vector<const ImageBuffer*> srcs, dsts;
            const std::size_t m = std::min<std::size_t>(pairs.size(), 8);
            for (std::size_t i = 0; i < m; ++i) {
                srcs.push_back(&pairs[i].src);
                dsts.push_back(&pairs[i].dst);
            }
            auto score_for = [&](int i) {
                const ScoreProvider p = make_provider(source, pairs[static_cast<std::size_t>(i)], scfg);
                return p(pairs[static_cast<std::size_t>(i)].src, Homography::identity(), 1);
            };
            on.guidance.g_l = calibrate_guidance(srcs, dsts, score_for, scfg, 0.1, cfg.seed);
        }
        SamplerConfig off = scfg;
        off.guidance.g_l = 0.0;

        const SuiteRun guided = run_suite(pairs, ids, source, on, cfg.n_iter, cfg.seed, cfg.jobs);
        const SuiteRun plain = run_suite(pairs, ids, source, off, cfg.n_iter, cfg.seed, cfg.jobs);

        csv << "pair_id,ncc_guided,ncc_unguided,auc_guided,auc_unguided\n";
        for (std::size_t i = 0; i < ids.size(); ++i)
            csv << ids[i] << "," << fmt(guided.final_ncc[i]) << "," << fmt(plain.final_ncc[i])
                << "," << fmt(guided.records[i].auc) << "," << fmt(plain.records[i].auc) << "\n";
        summary["g_l"] = on.guidance.g_l;
        summary["mean_ncc_guided"] = mean_of(guided.final_ncc);
        summary["mean_ncc_unguided"] = mean_of(plain.final_ncc);
        summary["mauc_guided"] = report(guided.records).mauc;
        summary["mauc_unguided"] = report(plain.records).mauc;
    } else if (axis == "iterative") {
        const SuiteRun once = run_suite(pairs, ids, source, scfg, 1, cfg.seed, cfg.jobs);
        const SuiteRun twice = run_suite(pairs, ids, source, scfg, 2, cfg.seed, cfg.jobs);
        csv << "pair_id,pnorm_1,pnorm_2,improved\n";
        int improved = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const bool ok = twice.pnorm[i] <= once.pnorm[i];
            improved += ok ? 1 : 0;
            csv << ids[i] << "," << fmt(once.pnorm[i]) << "," << fmt(twice.pnorm[i]) << ","
                << (ok ? 1 : 0) << "\n";
        }
        summary["improved_fraction"] =
            static_cast<double>(improved) / static_cast<double>(ids.size());
        summary["mauc_1"] = report(once.records).mauc;
        summary["mauc_2"] = report(twice.records).mauc;
    } else if (axis == "scheduling") {
        // toggle grid over (delta_s, delta_x, delta_r); off replaces the
        // dynamic schedule with its constant counterpart
        const bool grid[5][3] = {{true, true, true},
                                 {true, false, false},
                                 {false, true, false},
                                 {false, false, true},
                                 {false, false, false}};
        const std::string eval_dir =
            cfg.eval_dataset_dir.empty() ? cfg.dataset_dir : cfg.eval_dataset_dir;
        const std::vector<std::string> eval_ids = list_pair_ids(eval_dir);
        std::vector<PairSample> eval_pairs;
        for (const auto& id : eval_ids) eval_pairs.push_back(load_pair(eval_dir, id));

        csv << "delta_s,delta_x,delta_r,Failed,Acceptable,Inaccurate,mAUC\n";
        summary["rows"] = json::array();
        for (int row = 0; row < 5; ++row) {
            RunConfig rc = cfg;
            rc.delta_s_dynamic = grid[row][0];
            rc.delta_x_dynamic = grid[row][1];
            rc.delta_r_dynamic = grid[row][2];
            rc.train_steps = cfg.ablate_train_steps;
            rc.output_dir = cfg.output_dir + "/sched_row" + std::to_string(row);
            TrainConfig tc = rc.train_config();
            const TrainResult tr = train(tc, pairs, hash);
            ModelBundle mb = load_checkpoint(tr.checkpoint_path);
            SamplerConfig rcfg = rc.sampler_config();
            rcfg.h_mean = mb.h_mean;
            rcfg.h_std = mb.h_std;
            PairScoreSource rsrc;
            rsrc.bundle = &mb;
            const SuiteRun run =
                run_suite(eval_pairs, eval_ids, rsrc, rcfg, cfg.n_iter, cfg.seed, cfg.jobs);
            const SuiteReport rep = report(run.records);
            csv << (grid[row][0] ? 1 : 0) << "," << (grid[row][1] ? 1 : 0) << ","
                << (grid[row][2] ? 1 : 0) << "," << fmt(rep.failed_pct) << ","
                << fmt(rep.acceptable_pct) << "," << fmt(rep.inaccurate_pct) << ","
                << fmt(rep.mauc) << "\n";
            summary["rows"].push_back({{"delta_s", grid[row][0]},
                                       {"delta_x", grid[row][1]},
                                       {"delta_r", grid[row][2]},
                                       {"mAUC", rep.mauc}});
        }
    } else if (axis == "steps") {
        csv << "t_h,t_v,mAUC,Acceptable\n";
        summary["cells"] = json::array();
        for (int th : cfg.sweep_t_h)
            for (int tv : cfg.sweep_t_v) {
                SamplerConfig c = scfg;
                c.t_h = th;
                c.t_v = tv;
                c.interleave = (tv + th - 1) / th;
                const SuiteRun run = run_suite(pairs, ids, source, c, cfg.n_iter,
                                               cfg.seed, cfg.jobs);
                const SuiteReport rep = report(run.records);
                csv << th << "," << tv << "," << fmt(rep.mauc) << ","
                    << fmt(rep.acceptable_pct) << "\n";
                summary["cells"].push_back(
                    {{"t_h", th}, {"t_v", tv}, {"mAUC", rep.mauc}});
            }
    } else if (axis == "degradation") {
        csv << "kind,param,mAUC,Acceptable\n";
        summary["cells"] = json::array();
        auto run_with = [&](const std::string& kind, double param) {
            std::vector<PairSample> degraded = pairs;
            const DegradeSpec spec = DegradeSpec::parse(kind, param);
            for (std::size_t i = 0; i < degraded.size(); ++i)
                degraded[i].dst = degrade(degraded[i].dst, spec,
                                          Rng::derive(cfg.seed, 0xde6 + i));
            const SuiteRun run = run_suite(degraded, ids, source, scfg, cfg.n_iter,
                                           cfg.seed, cfg.jobs);
            const SuiteReport rep = report(run.records);
            csv << kind << "," << fmt(param) << "," << fmt(rep.mauc) << ","
                << fmt(rep.acceptable_pct) << "\n";
            summary["cells"].push_back({{"kind", kind}, {"param", param}, {"mAUC", rep.mauc}});
        };
        for (double s : cfg.degrade_noise_sigmas) run_with("gauss_noise", s);
        for (double s : cfg.degrade_blur_sigmas) run_with("gauss_blur", s);
        for (double a : cfg.degrade_illum_alphas) run_with("low_illum", a);
    } else {
        throw InvalidConfig("ablate: unknown axis " + axis +
                            " (guidance|iterative|scheduling|steps|degradation)");
    }

    std::ofstream sf(cfg.output_dir + "/ablate_" + axis + ".json");
    sf << summary.dump(2) << "\n";
    std::cout << "ablate " << axis << ": report in " << cfg.output_dir << "\n";
    return 0;
}

// ------------------------------------------------------------ gradcheck

int cmd_gradcheck(const RunConfig& cfg) {
    const GradCheckReport rep = grad_check(cfg.seed, 200, 1e-4);
    for (const auto& e : rep.per_kind)
        std::printf("gradcheck %-7s checked=%-4d max_rel_err=%.3e %s\n", e.kind.c_str(),
                    e.checked, e.max_rel_err, e.max_rel_err < 1e-4 ? "ok" : "FAIL");
    std::printf("gradcheck worst=%.3e -> %s\n", rep.worst, rep.pass ? "PASS" : "FAIL");
    return rep.pass ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffalign: coupled score-chain image alignment toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file");

    // flag overrides applied on top of the config file
    std::optional<std::uint64_t> seed_f;
    std::optional<int> jobs_f, n_iter_f, n_pairs_f, t_h_f, t_v_f, image_size_f;
    std::optional<long> train_steps_f;
    std::optional<double> g_l_f;
    std::optional<std::string> dataset_f, output_f, checkpoint_f, eval_dataset_f;
    bool oracle_f = false;
    app.add_option("--seed", seed_f, "override seed");
    app.add_option("--jobs", jobs_f, "pair-level parallelism");
    app.add_option("--n-iter", n_iter_f, "alignment rounds");
    app.add_option("--n-pairs", n_pairs_f, "pairs to generate");
    app.add_option("--t-h", t_h_f, "homography chain steps");
    app.add_option("--t-v", t_v_f, "displacement chain steps");
    app.add_option("--image-size", image_size_f, "working image size");
    app.add_option("--train-steps", train_steps_f, "training steps");
    app.add_option("--g-l", g_l_f, "guidance strength");
    app.add_option("--dataset-dir", dataset_f, "dataset directory");
    app.add_option("--eval-dataset-dir", eval_dataset_f, "evaluation dataset (ablate)");
    app.add_option("--output-dir", output_f, "output directory");
    app.add_option("--checkpoint", checkpoint_f, "model checkpoint");
    app.add_flag("--oracle", oracle_f, "use ground-truth oracle scores");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic pair dataset");
    auto* tr = app.add_subcommand("train", "train the score networks");
    std::string resume;
    tr->add_option("--resume", resume, "checkpoint to resume from");
    auto* al = app.add_subcommand("align", "align pairs from a dataset");
    std::string only_pair;
    al->add_option("--pair", only_pair, "align a single pair id");
    auto* ev = app.add_subcommand("eval", "score alignment results against ground truth");
    std::string results_dir, gt_dir, eval_out;
    ev->add_option("results", results_dir, "results directory")->required();
    ev->add_option("gt", gt_dir, "ground-truth dataset directory")->required();
    ev->add_option("--out", eval_out, "report directory (default: results dir)");
    auto* ab = app.add_subcommand("ablate", "comparison sweeps");
    std::string axis;
    ab->add_option("axis", axis, "guidance|iterative|scheduling|steps|degradation")->required();
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    (void)gen;
    (void)gc;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (seed_f) cfg.seed = *seed_f;
        if (jobs_f) cfg.jobs = *jobs_f;
        if (n_iter_f) cfg.n_iter = *n_iter_f;
        if (n_pairs_f) cfg.n_pairs = *n_pairs_f;
        if (t_h_f) cfg.t_h = *t_h_f;
        if (t_v_f) cfg.t_v = *t_v_f;
        if (image_size_f) cfg.image_size = *image_size_f;
        if (train_steps_f) cfg.train_steps = *train_steps_f;
        if (g_l_f) cfg.g_l = *g_l_f;
        if (dataset_f) cfg.dataset_dir = *dataset_f;
        if (eval_dataset_f) cfg.eval_dataset_dir = *eval_dataset_f;
        if (output_f) cfg.output_dir = *output_f;
        if (checkpoint_f) cfg.checkpoint = *checkpoint_f;
        if (oracle_f) cfg.oracle = true;
        cfg.validate();

        if (app.got_subcommand("gen-data")) return cmd_gen_data(cfg);
        if (app.got_subcommand("train")) return cmd_train(cfg, resume);
        if (app.got_subcommand("align")) return cmd_align(cfg, only_pair);
        if (app.got_subcommand("eval"))
            return cmd_eval(cfg, results_dir, gt_dir, eval_out.empty() ? results_dir : eval_out);
        if (app.got_subcommand("ablate")) return cmd_ablate(cfg, axis);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(cfg);
        return 1;
    } catch (const InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const GradCheckFailure& e) {
        std::cerr << "gradcheck failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
