#pragma once

#include "diffalign/synth.hpp"

#include <string>
#include <vector>

namespace diffalign {

// Dataset directory layout: per pair <id>_src.pgm, <id>_dst.pgm,
// <id>_gt.json, optional <id>_vgt.admt, plus a dataset.json manifest.

std::string pair_id(int index);

void save_pair(const std::string& dir, const std::string& id, const PairSample& p,
               const std::string& config_hash);
PairSample load_pair(const std::string& dir, const std::string& id);

/// Sorted pair ids found in a dataset directory.
std::vector<std::string> list_pair_ids(const std::string& dir);

std::vector<PairSample> load_dataset(const std::string& dir);

/// Component-wise mean/std of the residual h_gt - identity over a set of
/// ground-truth homographies. Stds below 1e-3 are floored to 1e-3 so
/// constant components stay pinned during sampling.
void residual_stats(const std::vector<Homography>& hs,
                    std::array<double, 9>& mean, std::array<double, 9>& stddev);

} // namespace diffalign
