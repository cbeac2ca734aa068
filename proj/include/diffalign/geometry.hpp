#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace diffalign {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Plane projective map, 9 real parameters, row-major 3x3.
/// Kept unnormalized in general; normalize() divides by h[8].
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity();
    static Homography translation(double tx, double ty);
    /// Similarity about (cx, cy): scale, rotation (radians), then translation.
    static Homography similarity(double scale, double angle_rad, double tx, double ty,
                                 double cx, double cy);

    double& operator[](std::size_t i) { return h[i]; }
    double operator[](std::size_t i) const { return h[i]; }
};

/// Ordered pixel coordinate set. |points| = width*height only when built
/// as a full grid; sampled subsets are allowed.
struct PixelGrid {
    std::vector<Point2> points;
    int width = 0;
    int height = 0;

    static PixelGrid full(int width, int height);
    /// rows x cols uniform lattice over the image interior with a fractional
    /// margin on every side. Deterministic per image size.
    static PixelGrid lattice(int width, int height, int rows, int cols, double margin_frac);
    /// The default 20-point lattice (4 rows x 5 cols, 10% margin).
    static PixelGrid lattice20(int width, int height);
};

/// Normalization thresholds (conservative double-precision limits).
inline constexpr double kNormalizableEps = 1e-8;
inline constexpr double kInvertibleEps = 1e-10;

/// Divide all entries by h[8]. Throws DegenerateProjection if |h[8]| <= 1e-8.
Homography normalize(const Homography& H);

bool is_normalizable(const Homography& H);

double det3(const Homography& H);

/// Projective transform of a point. Throws DegenerateProjection when the
/// denominator magnitude is <= 1e-8.
Point2 apply_homography(const Homography& H, const Point2& p);

/// compose(A, B) maps p the way A(B(p)) does. Result is normalized.
Homography compose(const Homography& A, const Homography& B);

/// Adjugate/determinant inverse. Throws SingularHomography if |det| <= 1e-10.
Homography invert(const Homography& H);

/// Point-set metric between two homographies:
///   sum_i (|H_t x_i - H_0 x_i|^p)^(1/p),  p >= 1.
/// With p = 2 each term is the per-point Euclidean displacement distance.
/// Points are taken in pixel units.
double p_norm_distance(const Homography& Ht, const Homography& H0,
                       const PixelGrid& points, double p);

/// Binary serialization: 4-byte magic "ADMH" + 9 little-endian f64, row-major.
void save_homography(const std::string& path, const Homography& H);
Homography load_homography(const std::string& path);

} // namespace diffalign
