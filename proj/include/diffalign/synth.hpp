#pragma once

#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"
#include "diffalign/imaging.hpp"
#include "diffalign/random.hpp"

#include <string>

namespace diffalign {

/// One synthetic training/evaluation pair with its ground truth.
struct PairSample {
    ImageBuffer src;
    ImageBuffer dst;
    Homography h_gt;
    DisplacementField v_gt; // coarse grid; all-zero when no deformation
    std::uint64_t seed = 0;
    DegradeSpec degrade;
};

struct TransformRange {
    double scale_min = 1.0;
    double scale_max = 1.0;
    double max_translation = 0.0;
    double max_rotation_deg = 0.0;
    double perspective_amp = 0.0;
    bool coarse_rotation = false; // extra rotation from {0, 90, 180, 270}
};

/// Random plane transform about the image center: similarity
/// (scale/rotation/translation), optional coarse 90-degree rotation,
/// small perspective terms. Normalized (h8 = 1).
Homography sample_transform(const TransformRange& range, int width, int height, Rng& rng);

/// Gaussian-filtered white noise on the coarse grid, rescaled so the
/// largest offset magnitude equals `amplitude`.
DisplacementField sample_deformation(int coarse_size, double amplitude, Rng& rng);

enum class BasePattern { Checker, VesselTree, Blobs };

ImageBuffer make_base_image(BasePattern kind, int size, Rng& rng);
BasePattern base_pattern_for_index(int index);

/// Builds dst = composite-warp(base, H_gt, v_gt) + degradation, resampling
/// the transform until the warp covers >= 25% of the frame (up to 10
/// tries, then InsufficientOverlap).
PairSample generate_pair(const ImageBuffer& base, const TransformRange& range,
                         double deform_amplitude, int coarse_size,
                         const DegradeSpec& degrade_spec, std::uint64_t seed);

inline constexpr double kMinOverlapFraction = 0.25;

} // namespace diffalign
