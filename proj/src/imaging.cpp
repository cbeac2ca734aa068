#include "diffalign/imaging.hpp"

#include "diffalign/errors.hpp"
#include "diffalign/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign {

SampleResult sample_bilinear(const ImageBuffer& img, double x, double y) {
    SampleResult r;
    r.in_bounds = sample_bilinear_at(img, x, y, r.values.data());
    return r;
}

WarpResult warp_global(const ImageBuffer& src, const Homography& H) {
    const Homography inv_h = invert(normalize(H));
    WarpResult r{ImageBuffer(src.width, src.height, src.channels),
                 ValidityMask(src.width, src.height)};
    kernels::warp_bilinear(src, inv_h, nullptr, r.image, r.mask);
    return r;
}

WarpResult warp_composite(const ImageBuffer& src, const Homography& H,
                          const DisplacementField& field) {
    const Homography inv_h = invert(normalize(H));
    WarpResult r{ImageBuffer(src.width, src.height, src.channels),
                 ValidityMask(src.width, src.height)};
    const DisplacementField full = upsample_field(field, src.width, src.height);
    kernels::warp_bilinear(src, inv_h, &full, r.image, r.mask);
    return r;
}

double ncc(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels ||
        mask.width != a.width || mask.height != a.height)
        throw ShapeMismatch("ncc: operand shapes differ");
    const NccSums s = kernels::ncc_sums(a, b, mask);
    if (s.n < 16)
        throw DegenerateRegion("ncc: fewer than 16 masked samples");
    const double n = static_cast<double>(s.n);
    if (s.saa / n <= 1e-12 || s.sbb / n <= 1e-12)
        throw DegenerateRegion("ncc: masked variance below threshold");
    return s.sab / std::sqrt(s.saa * s.sbb);
}

ImageBuffer structure_map(const ImageBuffer& img, double sigma,
                          double threshold_percentile) {
    const ImageBuffer gray = to_gray(img);
    const ImageBuffer smooth = kernels::gaussian_blur(gray, sigma);

    // central-difference gradient magnitude, clamped borders
    ImageBuffer mag(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.width - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.height - 1);
            const double gx = 0.5 * (smooth.at(xp, y) - smooth.at(xm, y));
            const double gy = 0.5 * (smooth.at(x, yp) - smooth.at(x, ym));
            mag.at(x, y) = std::sqrt(gx * gx + gy * gy);
        }

    const auto [mn_it, mx_it] = std::minmax_element(mag.data.begin(), mag.data.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx - mn < 1e-15) {
        std::fill(mag.data.begin(), mag.data.end(), 0.0);
        return mag;
    }
    for (double& v : mag.data) v = (v - mn) / (mx - mn);

    // nearest-rank percentile, then soft threshold (shrink and rescale)
    std::vector<double> sorted = mag.data;
    const std::size_t idx = static_cast<std::size_t>(
        std::lround(threshold_percentile * static_cast<double>(sorted.size() - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
    const double thr = sorted[idx];
    const double denom = std::max(1.0 - thr, 1e-12);
    for (double& v : mag.data)
        v = std::clamp((v - thr) / denom, 0.0, 1.0);
    return mag;
}

double smoothness_energy(const DisplacementField& f) {
    if (f.width < 2 || f.height < 2)
        throw InvalidParameter("smoothness_energy: field must be at least 2x2");
    double total = 0.0;
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            if (x + 1 < f.width) {
                const double du = f.u_at(x + 1, y) - f.u_at(x, y);
                const double dv = f.v_at(x + 1, y) - f.v_at(x, y);
                total += du * du + dv * dv;
            }
            if (y + 1 < f.height) {
                const double du = f.u_at(x, y + 1) - f.u_at(x, y);
                const double dv = f.v_at(x, y + 1) - f.v_at(x, y);
                total += du * du + dv * dv;
            }
        }
    return total;
}

DegradeSpec DegradeSpec::parse(const std::string& kind, double param) {
    DegradeSpec s;
    if (kind == "none") {
        s.kind = DegradeKind::None;
    } else if (kind == "gauss_noise") {
        s.kind = DegradeKind::GaussNoise;
    } else if (kind == "gauss_blur") {
        s.kind = DegradeKind::GaussBlur;
    } else if (kind == "low_illum") {
        s.kind = DegradeKind::LowIllum;
    } else {
        throw InvalidParameter("degrade: unknown kind '" + kind + "'");
    }
    s.param = param;
    return s;
}

std::string DegradeSpec::kind_name() const {
    switch (kind) {
        case DegradeKind::None: return "none";
        case DegradeKind::GaussNoise: return "gauss_noise";
        case DegradeKind::GaussBlur: return "gauss_blur";
        case DegradeKind::LowIllum: return "low_illum";
    }
    return "none";
}

ImageBuffer degrade(const ImageBuffer& img, const DegradeSpec& spec, std::uint64_t seed) {
    switch (spec.kind) {
        case DegradeKind::None:
            return img;
        case DegradeKind::GaussNoise: {
            if (spec.param <= 0.0)
                throw InvalidParameter("degrade: gauss_noise sigma must be > 0");
            ImageBuffer out = img;
            Rng rng(seed);
            for (double& v : out.data)
                v = std::clamp(v + spec.param * rng.normal(), 0.0, 1.0);
            return out;
        }
        case DegradeKind::GaussBlur: {
            if (spec.param <= 0.0)
                throw InvalidParameter("degrade: gauss_blur sigma must be > 0");
            return kernels::gaussian_blur(img, spec.param);
        }
        case DegradeKind::LowIllum: {
            if (spec.param <= 0.0 || spec.param >= 1.0)
                throw InvalidParameter("degrade: low_illum alpha must be in (0,1)");
            ImageBuffer out = img;
            for (double& v : out.data) v *= spec.param;
            return out;
        }
    }
    return img;
}

} // namespace diffalign
