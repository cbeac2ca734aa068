#pragma once

#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"

#include <optional>
#include <string>
#include <vector>

namespace diffalign {

/// Per-control-point alignment error in pixels.
struct ErrorSample {
    std::vector<double> errors;
};

enum class SuccessCategory { Failed, Acceptable, Inaccurate };

std::string category_name(SuccessCategory c);

/// Euclidean distance between predicted and ground-truth source
/// coordinates, map(p) = H_norm^-1(p + v(p)), over a grid_n x grid_n
/// lattice restricted to the ground-truth overlap region (points whose
/// ground-truth source coordinate lands in bounds).
ErrorSample control_point_errors(const Homography& h_pred, const DisplacementField& v_pred,
                                 const Homography& h_gt, const DisplacementField& v_gt,
                                 int width, int height, int grid_n = 10);

double median_error(const ErrorSample& e);  // MEE
double max_error(const ErrorSample& e);     // MAE

/// Acceptable iff MAE < 50 and MEE < 20 (strict); Failed when no
/// transform was produced (null sample).
SuccessCategory classify(const ErrorSample* errors);

/// Per-pair area under the success-vs-threshold curve: thresholds
/// tau = 0..max_threshold in steps of 0.1, success = [MEE <= tau],
/// trapezoidal mean scaled to [0,100].
double pair_auc(const ErrorSample& e, double max_threshold = 25.0);

/// Suite curve: success(tau) = fraction of pairs with MEE <= tau
/// (failed pairs never succeed). Same integration.
double suite_auc(const std::vector<std::optional<ErrorSample>>& pairs,
                 double max_threshold = 25.0);

struct PairEvalRecord {
    std::string pair_id;
    std::optional<ErrorSample> errors; // nullopt = Failed
    double mee = 0.0;
    double mae = 0.0;
    SuccessCategory category = SuccessCategory::Failed;
    double auc = 0.0;
};

PairEvalRecord evaluate_pair(const std::string& pair_id,
                             const Homography* h_pred, const DisplacementField* v_pred,
                             const Homography& h_gt, const DisplacementField& v_gt,
                             int width, int height);

struct SuiteReport {
    int n = 0;
    double failed_pct = 0.0;
    double acceptable_pct = 0.0;
    double inaccurate_pct = 0.0;
    double mauc = 0.0; // mean of per-pair AUC values
};

SuiteReport report(const std::vector<PairEvalRecord>& records);

void write_eval_csv(const std::string& path, const std::vector<PairEvalRecord>& records);
void write_summary_json(const std::string& path, const SuiteReport& rep,
                        const std::string& config_hash);

} // namespace diffalign
