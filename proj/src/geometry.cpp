#include "diffalign/geometry.hpp"

#include "diffalign/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace diffalign {

Homography Homography::identity() {
    return Homography{};
}

Homography Homography::translation(double tx, double ty) {
    Homography H;
    H.h = {1, 0, tx, 0, 1, ty, 0, 0, 1};
    return H;
}

Homography Homography::similarity(double scale, double angle_rad, double tx, double ty,
                                  double cx, double cy) {
    const double c = scale * std::cos(angle_rad);
    const double s = scale * std::sin(angle_rad);
    // rotate/scale about (cx, cy), then translate
    Homography H;
    H.h = {c, -s, cx - c * cx + s * cy + tx,
           s, c,  cy - s * cx - c * cy + ty,
           0, 0,  1};
    return H;
}

PixelGrid PixelGrid::full(int width, int height) {
    PixelGrid g;
    g.width = width;
    g.height = height;
    g.points.reserve(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            g.points.push_back({static_cast<double>(x), static_cast<double>(y)});
    return g;
}

PixelGrid PixelGrid::lattice(int width, int height, int rows, int cols, double margin_frac) {
    PixelGrid g;
    g.width = width;
    g.height = height;
    const double mx = margin_frac * (width - 1);
    const double my = margin_frac * (height - 1);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double fx = (cols > 1) ? static_cast<double>(c) / (cols - 1) : 0.5;
            const double fy = (rows > 1) ? static_cast<double>(r) / (rows - 1) : 0.5;
            g.points.push_back({mx + fx * ((width - 1) - 2.0 * mx),
                                my + fy * ((height - 1) - 2.0 * my)});
        }
    }
    return g;
}

PixelGrid PixelGrid::lattice20(int width, int height) {
    return lattice(width, height, 4, 5, 0.1);
}

bool is_normalizable(const Homography& H) {
    return std::abs(H.h[8]) > kNormalizableEps;
}

Homography normalize(const Homography& H) {
    if (!is_normalizable(H))
        throw DegenerateProjection("normalize: |h8| below threshold");
    Homography R = H;
    const double w = H.h[8];
    for (double& v : R.h) v /= w;
    return R;
}

double det3(const Homography& H) {
    const auto& h = H.h;
    return h[0] * (h[4] * h[8] - h[5] * h[7])
         - h[1] * (h[3] * h[8] - h[5] * h[6])
         + h[2] * (h[3] * h[7] - h[4] * h[6]);
}

Point2 apply_homography(const Homography& H, const Point2& p) {
    const auto& h = H.h;
    const double d = h[6] * p.x + h[7] * p.y + h[8];
    if (std::abs(d) <= kNormalizableEps)
        throw DegenerateProjection("apply_homography: denominator near zero");
    return {(h[0] * p.x + h[1] * p.y + h[2]) / d,
            (h[3] * p.x + h[4] * p.y + h[5]) / d};
}

Homography compose(const Homography& A, const Homography& B) {
    if (!is_normalizable(A) || !is_normalizable(B))
        throw DegenerateProjection("compose: operand not normalizable");
    Homography C;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k)
                acc += A.h[static_cast<std::size_t>(3 * r + k)] * B.h[static_cast<std::size_t>(3 * k + c)];
            C.h[static_cast<std::size_t>(3 * r + c)] = acc;
        }
    }
    return normalize(C);
}

Homography invert(const Homography& H) {
    const double d = det3(H);
    if (std::abs(d) <= kInvertibleEps)
        throw SingularHomography("invert: determinant near zero");
    const auto& h = H.h;
    Homography R;
    // adjugate / det
    R.h[0] = (h[4] * h[8] - h[5] * h[7]) / d;
    R.h[1] = (h[2] * h[7] - h[1] * h[8]) / d;
    R.h[2] = (h[1] * h[5] - h[2] * h[4]) / d;
    R.h[3] = (h[5] * h[6] - h[3] * h[8]) / d;
    R.h[4] = (h[0] * h[8] - h[2] * h[6]) / d;
    R.h[5] = (h[2] * h[3] - h[0] * h[5]) / d;
    R.h[6] = (h[3] * h[7] - h[4] * h[6]) / d;
    R.h[7] = (h[1] * h[6] - h[0] * h[7]) / d;
    R.h[8] = (h[0] * h[4] - h[1] * h[3]) / d;
    return R;
}

double p_norm_distance(const Homography& Ht, const Homography& H0,
                       const PixelGrid& points, double p) {
    if (p < 1.0)
        throw InvalidParameter("p_norm_distance: p must be >= 1");
    double total = 0.0;
    for (const Point2& q : points.points) {
        const Point2 a = apply_homography(Ht, q);
        const Point2 b = apply_homography(H0, q);
        const double dx = a.x - b.x;
        const double dy = a.y - b.y;
        const double dist = std::sqrt(dx * dx + dy * dy);
        total += std::pow(std::pow(dist, p), 1.0 / p);
    }
    return total;
}

void save_homography(const std::string& path, const Homography& H) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("save_homography: cannot open " + path);
    f.write("ADMH", 4);
    f.write(reinterpret_cast<const char*>(H.h.data()), 9 * sizeof(double));
    if (!f) throw IOError("save_homography: write failed for " + path);
}

Homography load_homography(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("load_homography: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "ADMH", 4) != 0)
        throw IOError("load_homography: bad magic in " + path);
    Homography H;
    f.read(reinterpret_cast<char*>(H.h.data()), 9 * sizeof(double));
    if (!f) throw IOError("load_homography: truncated file " + path);
    return H;
}

} // namespace diffalign
