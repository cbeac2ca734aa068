#pragma once

#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"
#include "diffalign/random.hpp"

#include <utility>

namespace diffalign {

struct WarpResult {
    ImageBuffer image;
    ValidityMask mask;
};

/// Bilinear sample of img at (x, y). Out-of-bounds positions return a
/// zero value with in_bounds = false. Values has one entry per channel.
struct SampleResult {
    std::array<double, 3> values{};
    bool in_bounds = false;
};
SampleResult sample_bilinear(const ImageBuffer& img, double x, double y);

/// Inverse warp of src by H: output[p] = src(H_norm^-1 p).
WarpResult warp_global(const ImageBuffer& src, const Homography& H);

/// Composite warp: output[p] = src(H_norm^-1 (p + v(p))). The field is
/// bilinearly upsampled to the source resolution if coarser. A zero
/// field reduces to warp_global bitwise.
WarpResult warp_composite(const ImageBuffer& src, const Homography& H,
                          const DisplacementField& field);

/// Zero-mean normalized cross-correlation over masked pixels, in [-1,1].
/// Requires >= 16 masked samples and masked variance > 1e-12 on each side.
double ncc(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask);

/// Ridge/edge magnitude of a lightly smoothed grayscale, min-max
/// normalized to [0,1], then soft-thresholded at the 70th percentile.
/// Deterministic. Smoothing sigma defaults to 1.0 px.
ImageBuffer structure_map(const ImageBuffer& img, double sigma = 1.0,
                          double threshold_percentile = 0.70);

/// Sum of squared forward differences of both field channels.
double smoothness_energy(const DisplacementField& f);

enum class DegradeKind { None, GaussNoise, GaussBlur, LowIllum };

struct DegradeSpec {
    DegradeKind kind = DegradeKind::None;
    double param = 0.0; // sigma for noise/blur, alpha for low_illum

    static DegradeSpec parse(const std::string& kind, double param);
    std::string kind_name() const;
};

/// Synthetic degradations: additive Gaussian noise clipped to [0,1],
/// separable Gaussian blur, or intensity scaling by alpha in (0,1).
ImageBuffer degrade(const ImageBuffer& img, const DegradeSpec& spec, std::uint64_t seed);

} // namespace diffalign
