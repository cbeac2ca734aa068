// Serial reference implementations of the hot kernels. Written as the
// plainest possible loops; the test suite cross-checks the OpenMP
// versions against these, and tools/bench_kernels compares their speed.

#include "diffalign/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign::ref {

void warp_bilinear(const ImageBuffer& src, const Homography& inv_h,
                   const DisplacementField* field,
                   ImageBuffer& out, ValidityMask& mask) {
    const auto& m = inv_h.h;
    std::array<double, 3> vals{};
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double px = static_cast<double>(x);
            double py = static_cast<double>(y);
            if (field) {
                px += field->u_at(x, y);
                py += field->v_at(x, y);
            }
            const double d = m[6] * px + m[7] * py + m[8];
            bool ok = std::abs(d) > kNormalizableEps;
            if (ok) {
                const double sx = (m[0] * px + m[1] * py + m[2]) / d;
                const double sy = (m[3] * px + m[4] * py + m[5]) / d;
                ok = sample_bilinear_at(src, sx, sy, vals.data());
            } else {
                vals.fill(0.0);
            }
            for (int c = 0; c < src.channels; ++c)
                out.at(x, y, c) = vals[static_cast<std::size_t>(c)];
            mask.set(x, y, ok);
        }
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
    const auto taps = gaussian_taps(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    ImageBuffer tmp(img.width, img.height, img.channels);
    ImageBuffer out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<std::size_t>(k + radius)]
                         * img.at(std::clamp(x + k, 0, img.width - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<std::size_t>(k + radius)]
                         * tmp.at(x, std::clamp(y + k, 0, img.height - 1), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

NccSums ncc_sums(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask) {
    NccSums s;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (int c = 0; c < a.channels; ++c) {
                s.sa += a.at(x, y, c);
                s.sb += b.at(x, y, c);
            }
            s.n += static_cast<std::size_t>(a.channels);
        }
    if (s.n == 0) return s;
    const double ma = s.sa / static_cast<double>(s.n);
    const double mb = s.sb / static_cast<double>(s.n);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double da = a.at(x, y, c) - ma;
                const double db = b.at(x, y, c) - mb;
                s.saa += da * da;
                s.sbb += db * db;
                s.sab += da * db;
            }
        }
    return s;
}

void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    int stride, int pad, Tensor& out) {
    const int ic = in.dims[0], ih = in.dims[1], iw = in.dims[2];
    const int oc = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < out.dims[1]; ++oy)
            for (int ox = 0; ox < out.dims[2]; ++ox) {
                double acc = b.data[static_cast<std::size_t>(o)];
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int yy = oy * stride + ky - pad;
                            const int xx = ox * stride + kx - pad;
                            if (yy < 0 || yy >= ih || xx < 0 || xx >= iw) continue;
                            acc += in.at3(i, yy, xx)
                                 * w.data[((static_cast<std::size_t>(o) * ic + i) * kh + ky) * kw + kx];
                        }
                out.at3(o, oy, ox) = acc;
            }
}

void conv2d_backward(const Tensor& in, const Tensor& w, int stride, int pad,
                     const Tensor& dout, Tensor* din, Tensor* dw, Tensor* db) {
    const int ic = in.dims[0], ih = in.dims[1], iw = in.dims[2];
    const int oc = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    if (din) std::fill(din->data.begin(), din->data.end(), 0.0);
    if (dw) std::fill(dw->data.begin(), dw->data.end(), 0.0);
    if (db) std::fill(db->data.begin(), db->data.end(), 0.0);

    // scatter form: walk every output element once and distribute
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < dout.dims[1]; ++oy)
            for (int ox = 0; ox < dout.dims[2]; ++ox) {
                const double g = dout.at3(o, oy, ox);
                if (db) db->data[static_cast<std::size_t>(o)] += g;
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int yy = oy * stride + ky - pad;
                            const int xx = ox * stride + kx - pad;
                            if (yy < 0 || yy >= ih || xx < 0 || xx >= iw) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(o) * ic + i) * kh + ky) * kw + kx;
                            if (dw) dw->data[wi] += in.at3(i, yy, xx) * g;
                            if (din) din->at3(i, yy, xx) += w.data[wi] * g;
                        }
            }
}

} // namespace diffalign::ref
