#include "diffalign/synth.hpp"

#include "diffalign/errors.hpp"
#include "diffalign/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign {

Homography sample_transform(const TransformRange& range, int width, int height, Rng& rng) {
    const double cx = 0.5 * (width - 1);
    const double cy = 0.5 * (height - 1);
    const double scale = rng.uniform(range.scale_min, range.scale_max);
    const double max_rot = range.max_rotation_deg * 3.14159265358979323846 / 180.0;
    const double angle = rng.uniform(-max_rot, max_rot);
    const double tx = rng.uniform(-range.max_translation, range.max_translation);
    const double ty = rng.uniform(-range.max_translation, range.max_translation);
    Homography H = Homography::similarity(scale, angle, tx, ty, cx, cy);

    if (range.coarse_rotation) {
        const int k = rng.uniform_int(4);
        if (k > 0) {
            const Homography R =
                Homography::similarity(1.0, k * (3.14159265358979323846 / 2.0), 0, 0, cx, cy);
            H = compose(R, H);
        }
    }
    if (range.perspective_amp > 0.0) {
        Homography P = Homography::identity();
        P.h[6] = rng.uniform(-range.perspective_amp, range.perspective_amp);
        P.h[7] = rng.uniform(-range.perspective_amp, range.perspective_amp);
        H = compose(P, H);
    }
    return normalize(H);
}

DisplacementField sample_deformation(int coarse_size, double amplitude, Rng& rng) {
    DisplacementField f(coarse_size, coarse_size);
    if (amplitude <= 0.0) return f;
    ImageBuffer noise(coarse_size, coarse_size, 1);
    for (int pass = 0; pass < 2; ++pass) {
        for (double& v : noise.data) v = rng.normal();
        const ImageBuffer smooth = kernels::gaussian_blur(noise, 2.0);
        auto& channel = (pass == 0) ? f.u : f.v;
        std::copy(smooth.data.begin(), smooth.data.end(), channel.begin());
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        peak = std::max({peak, std::abs(f.u[i]), std::abs(f.v[i])});
    if (peak > 0.0) {
        const double s = amplitude / peak;
        for (double& v : f.u) v *= s;
        for (double& v : f.v) v *= s;
    }
    return f;
}

namespace {

ImageBuffer make_checker(int size, Rng& rng) {
    const int cell = 6 + rng.uniform_int(7); // 6..12 px
    const int ncells = size / cell + 2;
    std::vector<double> values(static_cast<std::size_t>(ncells) * ncells);
    for (double& v : values) v = 0.1 + 0.85 * rng.uniform();
    const int phase_x = rng.uniform_int(cell);
    const int phase_y = rng.uniform_int(cell);
    ImageBuffer img(size, size, 1);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int cxi = (x + phase_x) / cell;
            const int cyi = (y + phase_y) / cell;
            const bool dark = ((cxi + cyi) & 1) != 0;
            const double v = values[static_cast<std::size_t>(cyi) * ncells + cxi];
            img.at(x, y) = dark ? 0.25 * v : v;
        }
    return img;
}

void stamp_disc(ImageBuffer& img, double cx, double cy, double r, double value) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + r + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            if (d <= r) img.at(x, y) = std::max(img.at(x, y), value);
        }
}

ImageBuffer make_vessel_tree(int size, Rng& rng) {
    ImageBuffer img(size, size, 1, 0.05);
    struct Walker {
        double x, y, dir, radius;
        int depth;
    };
    std::vector<Walker> stack;
    const int n_roots = 2 + rng.uniform_int(2);
    for (int i = 0; i < n_roots; ++i) {
        stack.push_back({rng.uniform(0.2, 0.8) * size, rng.uniform(0.2, 0.8) * size,
                         rng.uniform(0.0, 6.283185307179586), 2.2, 0});
    }
    int guard = 0;
    while (!stack.empty() && guard < 4000) {
        Walker w = stack.back();
        stack.pop_back();
        int steps = 14 + rng.uniform_int(20);
        while (steps-- > 0 && ++guard < 4000) {
            w.x += 1.6 * std::cos(w.dir);
            w.y += 1.6 * std::sin(w.dir);
            if (w.x < 1 || w.x > size - 2 || w.y < 1 || w.y > size - 2) break;
            w.dir += 0.35 * rng.normal();
            stamp_disc(img, w.x, w.y, w.radius, 0.85 + 0.1 * rng.uniform());
            if (w.depth < 3 && rng.uniform() < 0.035) {
                Walker branch = w;
                branch.dir += (rng.uniform() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.5, 1.1);
                branch.radius = std::max(0.8, w.radius * 0.7);
                branch.depth = w.depth + 1;
                stack.push_back(branch);
            }
        }
    }
    return kernels::gaussian_blur(img, 0.6);
}

ImageBuffer make_blobs(int size, Rng& rng) {
    ImageBuffer img(size, size, 1);
    const int n = 8 + rng.uniform_int(8);
    std::vector<double> cx(static_cast<std::size_t>(n)), cy(static_cast<std::size_t>(n)),
        sg(static_cast<std::size_t>(n)), amp(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        cx[static_cast<std::size_t>(i)] = rng.uniform(0.0, size - 1.0);
        cy[static_cast<std::size_t>(i)] = rng.uniform(0.0, size - 1.0);
        sg[static_cast<std::size_t>(i)] = rng.uniform(3.0, 10.0);
        amp[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
    }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dx = x - cx[static_cast<std::size_t>(i)];
                const double dy = y - cy[static_cast<std::size_t>(i)];
                const double s2 = sg[static_cast<std::size_t>(i)] * sg[static_cast<std::size_t>(i)];
                acc += amp[static_cast<std::size_t>(i)] * std::exp(-0.5 * (dx * dx + dy * dy) / s2);
            }
            img.at(x, y) = acc;
        }
    const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
    const double lo = *mn, hi = *mx;
    if (hi - lo > 1e-12)
        for (double& v : img.data) v = (v - lo) / (hi - lo);
    return img;
}

} // namespace

BasePattern base_pattern_for_index(int index) {
    switch (index % 3) {
        case 0: return BasePattern::Checker;
        case 1: return BasePattern::VesselTree;
        default: return BasePattern::Blobs;
    }
}

ImageBuffer make_base_image(BasePattern kind, int size, Rng& rng) {
    switch (kind) {
        case BasePattern::Checker: return make_checker(size, rng);
        case BasePattern::VesselTree: return make_vessel_tree(size, rng);
        case BasePattern::Blobs: return make_blobs(size, rng);
    }
    return ImageBuffer(size, size, 1);
}

PairSample generate_pair(const ImageBuffer& base, const TransformRange& range,
                         double deform_amplitude, int coarse_size,
                         const DegradeSpec& degrade_spec, std::uint64_t seed) {
    bool constant = true;
    for (double v : base.data)
        if (v != base.data[0]) { constant = false; break; }
    if (constant)
        throw InvalidParameter("generate_pair: base image is constant");

    Rng rng(seed);
    const std::size_t min_overlap =
        static_cast<std::size_t>(kMinOverlapFraction * static_cast<double>(base.pixel_count()));
    for (int attempt = 0; attempt < 10; ++attempt) {
        PairSample p;
        p.src = base;
        p.seed = seed;
        p.degrade = degrade_spec;
        p.h_gt = sample_transform(range, base.width, base.height, rng);
        p.v_gt = sample_deformation(coarse_size, deform_amplitude, rng);
        WarpResult warped = warp_composite(base, p.h_gt, p.v_gt);
        if (warped.mask.count() < min_overlap) continue;
        p.dst = (degrade_spec.kind == DegradeKind::None)
            ? std::move(warped.image)
            : degrade(warped.image, degrade_spec, Rng::derive(seed, 0x9d5f));
        return p;
    }
    throw InsufficientOverlap("generate_pair: could not reach 25% overlap in 10 tries");
}

} // namespace diffalign
