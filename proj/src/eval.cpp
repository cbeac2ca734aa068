#include "diffalign/eval.hpp"

#include "diffalign/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace diffalign {

using nlohmann::json;

std::string category_name(SuccessCategory c) {
    switch (c) {
        case SuccessCategory::Failed: return "Failed";
        case SuccessCategory::Acceptable: return "Acceptable";
        case SuccessCategory::Inaccurate: return "Inaccurate";
    }
    return "Failed";
}

namespace {

void sample_field(const DisplacementField& f, double x, double y, double* u, double* v) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
    const int x0 = std::min(static_cast<int>(cx), f.width - 1);
    const int y0 = std::min(static_cast<int>(cy), f.height - 1);
    const int x1 = std::min(x0 + 1, f.width - 1);
    const int y1 = std::min(y0 + 1, f.height - 1);
    const double fx = cx - x0, fy = cy - y0;
    *u = (1 - fy) * ((1 - fx) * f.u_at(x0, y0) + fx * f.u_at(x1, y0))
       + fy * ((1 - fx) * f.u_at(x0, y1) + fx * f.u_at(x1, y1));
    *v = (1 - fy) * ((1 - fx) * f.v_at(x0, y0) + fx * f.v_at(x1, y0))
       + fy * ((1 - fx) * f.v_at(x0, y1) + fx * f.v_at(x1, y1));
}

Point2 composite_coord(const Homography& h_inv, const DisplacementField& v, const Point2& p) {
    double u = 0.0, w = 0.0;
    sample_field(v, p.x, p.y, &u, &w);
    return apply_homography(h_inv, {p.x + u, p.y + w});
}

} // namespace

ErrorSample control_point_errors(const Homography& h_pred, const DisplacementField& v_pred,
                                 const Homography& h_gt, const DisplacementField& v_gt,
                                 int width, int height, int grid_n) {
    const Homography gt_inv = invert(normalize(h_gt));
    const Homography pred_inv = invert(normalize(h_pred));
    const DisplacementField vg = upsample_field(v_gt, width, height);
    const DisplacementField vp = upsample_field(v_pred, width, height);
    const PixelGrid grid = PixelGrid::lattice(width, height, grid_n, grid_n, 0.0);

    ErrorSample out;
    for (const Point2& p : grid.points) {
        Point2 gt_src;
        try {
            gt_src = composite_coord(gt_inv, vg, p);
        } catch (const DegenerateProjection&) {
            continue;
        }
        // overlap restriction: ground truth must land inside the source
        if (gt_src.x < 0.0 || gt_src.x > width - 1.0 ||
            gt_src.y < 0.0 || gt_src.y > height - 1.0)
            continue;
        Point2 pr;
        try {
            pr = composite_coord(pred_inv, vp, p);
        } catch (const DegenerateProjection&) {
            out.errors.push_back(std::hypot(static_cast<double>(width), static_cast<double>(height)));
            continue;
        }
        out.errors.push_back(std::hypot(pr.x - gt_src.x, pr.y - gt_src.y));
    }
    if (out.errors.empty())
        throw EmptyOverlap("control_point_errors: no lattice point in the overlap region");
    return out;
}

double median_error(const ErrorSample& e) {
    std::vector<double> v = e.errors;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double max_error(const ErrorSample& e) {
    return *std::max_element(e.errors.begin(), e.errors.end());
}

SuccessCategory classify(const ErrorSample* errors) {
    if (!errors || errors->errors.empty()) return SuccessCategory::Failed;
    const double mae = max_error(*errors);
    const double mee = median_error(*errors);
    return (mae < 50.0 && mee < 20.0) ? SuccessCategory::Acceptable
                                      : SuccessCategory::Inaccurate;
}

namespace {

double integrate_curve(const std::vector<double>& s, double step, double span) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
        acc += 0.5 * (s[i] + s[i + 1]) * step;
    return 100.0 * acc / span;
}

} // namespace

double pair_auc(const ErrorSample& e, double max_threshold) {
    const double mee = median_error(e);
    const int n = static_cast<int>(std::lround(max_threshold / 0.1));
    std::vector<double> s(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i)
        s[static_cast<std::size_t>(i)] = (mee <= i * 0.1) ? 1.0 : 0.0;
    return integrate_curve(s, 0.1, max_threshold);
}

double suite_auc(const std::vector<std::optional<ErrorSample>>& pairs, double max_threshold) {
    if (pairs.empty())
        throw EmptyInput("suite_auc: no pairs");
    const int n = static_cast<int>(std::lround(max_threshold / 0.1));
    std::vector<double> s(static_cast<std::size_t>(n) + 1, 0.0);
    for (int i = 0; i <= n; ++i) {
        const double tau = i * 0.1;
        int ok = 0;
        for (const auto& e : pairs)
            if (e && median_error(*e) <= tau) ++ok;
        s[static_cast<std::size_t>(i)] = static_cast<double>(ok) / static_cast<double>(pairs.size());
    }
    return integrate_curve(s, 0.1, max_threshold);
}

PairEvalRecord evaluate_pair(const std::string& pair_id,
                             const Homography* h_pred, const DisplacementField* v_pred,
                             const Homography& h_gt, const DisplacementField& v_gt,
                             int width, int height) {
    PairEvalRecord rec;
    rec.pair_id = pair_id;
    if (!h_pred) {
        rec.category = SuccessCategory::Failed;
        return rec;
    }
    DisplacementField vzero(width, height);
    const DisplacementField& vp = v_pred ? *v_pred : vzero;
    try {
        ErrorSample e = control_point_errors(*h_pred, vp, h_gt, v_gt, width, height);
        rec.mee = median_error(e);
        rec.mae = max_error(e);
        rec.auc = pair_auc(e);
        rec.category = classify(&e);
        rec.errors = std::move(e);
    } catch (const EmptyOverlap&) {
        rec.category = SuccessCategory::Failed;
    } catch (const DegenerateProjection&) {
        rec.category = SuccessCategory::Failed;
    } catch (const SingularHomography&) {
        rec.category = SuccessCategory::Failed;
    }
    return rec;
}

SuiteReport report(const std::vector<PairEvalRecord>& records) {
    if (records.empty())
        throw EmptyInput("report: no records");
    SuiteReport rep;
    rep.n = static_cast<int>(records.size());
    int failed = 0, acceptable = 0, inaccurate = 0;
    double auc_sum = 0.0;
    for (const auto& r : records) {
        switch (r.category) {
            case SuccessCategory::Failed: ++failed; break;
            case SuccessCategory::Acceptable: ++acceptable; break;
            case SuccessCategory::Inaccurate: ++inaccurate; break;
        }
        auc_sum += r.auc;
    }
    const double n = static_cast<double>(rep.n);
    rep.failed_pct = 100.0 * failed / n;
    rep.acceptable_pct = 100.0 * acceptable / n;
    rep.inaccurate_pct = 100.0 * inaccurate / n;
    rep.mauc = auc_sum / n;
    return rep;
}

void write_eval_csv(const std::string& path, const std::vector<PairEvalRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IOError("write_eval_csv: cannot open " + path);
    f << "pair_id,MEE,MAE,category,AUC\n";
    char row[256];
    for (const auto& r : records) {
        if (r.category == SuccessCategory::Failed && !r.errors) {
            std::snprintf(row, sizeof(row), "%s,,,Failed,%.17g\n", r.pair_id.c_str(), 0.0);
        } else {
            std::snprintf(row, sizeof(row), "%s,%.17g,%.17g,%s,%.17g\n", r.pair_id.c_str(),
                          r.mee, r.mae, category_name(r.category).c_str(), r.auc);
        }
        f << row;
    }
}

void write_summary_json(const std::string& path, const SuiteReport& rep,
                        const std::string& config_hash) {
    json j;
    j["n"] = rep.n;
    j["Failed"] = rep.failed_pct;
    j["Acceptable"] = rep.acceptable_pct;
    j["Inaccurate"] = rep.inaccurate_pct;
    j["mAUC"] = rep.mauc;
    j["config_hash"] = config_hash;
    std::ofstream f(path);
    if (!f) throw IOError("write_summary_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

} // namespace diffalign
