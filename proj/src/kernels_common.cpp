#include "diffalign/kernels.hpp"

#include <cmath>

namespace diffalign {

bool sample_bilinear_at(const ImageBuffer& img, double x, double y, double* out_values) {
    const bool in_bounds =
        x >= 0.0 && x <= static_cast<double>(img.width - 1) &&
        y >= 0.0 && y <= static_cast<double>(img.height - 1);
    if (!in_bounds) {
        for (int c = 0; c < img.channels; ++c) out_values[c] = 0.0;
        return false;
    }
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 > img.width - 2) x0 = img.width - 2;
    if (y0 > img.height - 2) y0 = img.height - 2;
    if (x0 < 0) x0 = 0;
    if (y0 < 0) y0 = 0;
    const int x1 = (img.width == 1) ? x0 : x0 + 1;
    const int y1 = (img.height == 1) ? y0 : y0 + 1;
    const double fx = x - x0;
    const double fy = y - y0;
    for (int c = 0; c < img.channels; ++c) {
        const double a = img.at(x0, y0, c), b = img.at(x1, y0, c);
        const double d = img.at(x0, y1, c), e = img.at(x1, y1, c);
        out_values[c] = (1.0 - fy) * ((1.0 - fx) * a + fx * b)
                      + fy * ((1.0 - fx) * d + fx * e);
    }
    return true;
}

std::vector<double> gaussian_taps(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

} // namespace diffalign
