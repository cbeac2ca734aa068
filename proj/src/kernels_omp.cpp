#include "diffalign/errors.hpp"
#include "diffalign/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace diffalign::kernels {

void warp_bilinear(const ImageBuffer& src, const Homography& inv_h,
                   const DisplacementField* field,
                   ImageBuffer& out, ValidityMask& mask) {
    const int w = out.width, h = out.height;
    const auto& m = inv_h.h;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        std::array<double, 3> vals{};
        for (int x = 0; x < w; ++x) {
            double px = static_cast<double>(x);
            double py = static_cast<double>(y);
            if (field) {
                px += field->u_at(x, y);
                py += field->v_at(x, y);
            }
            const double d = m[6] * px + m[7] * py + m[8];
            bool ok = std::abs(d) > kNormalizableEps;
            double sx = 0.0, sy = 0.0;
            if (ok) {
                sx = (m[0] * px + m[1] * py + m[2]) / d;
                sy = (m[3] * px + m[4] * py + m[5]) / d;
                ok = sample_bilinear_at(src, sx, sy, vals.data());
            } else {
                for (int c = 0; c < src.channels; ++c) vals[static_cast<std::size_t>(c)] = 0.0;
            }
            for (int c = 0; c < src.channels; ++c)
                out.at(x, y, c) = vals[static_cast<std::size_t>(c)];
            mask.set(x, y, ok);
        }
    }
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
    const auto taps = gaussian_taps(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    ImageBuffer tmp(img.width, img.height, img.channels);
    ImageBuffer out(img.width, img.height, img.channels);

    // horizontal pass
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int xi = std::clamp(x + k, 0, img.width - 1);
                    acc += taps[static_cast<std::size_t>(k + radius)] * img.at(xi, y, c);
                }
                tmp.at(x, y, c) = acc;
            }

    // vertical pass
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int yi = std::clamp(y + k, 0, img.height - 1);
                    acc += taps[static_cast<std::size_t>(k + radius)] * tmp.at(x, yi, c);
                }
                out.at(x, y, c) = acc;
            }
    return out;
}

NccSums ncc_sums(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask) {
    const int h = a.height, w = a.width, ch = a.channels;
    std::vector<double> row_sa(static_cast<std::size_t>(h), 0.0), row_sb(static_cast<std::size_t>(h), 0.0);
    std::vector<std::size_t> row_n(static_cast<std::size_t>(h), 0);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double sa = 0.0, sb = 0.0;
        std::size_t n = 0;
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y)) continue;
            for (int c = 0; c < ch; ++c) {
                sa += a.at(x, y, c);
                sb += b.at(x, y, c);
            }
            n += static_cast<std::size_t>(ch);
        }
        row_sa[static_cast<std::size_t>(y)] = sa;
        row_sb[static_cast<std::size_t>(y)] = sb;
        row_n[static_cast<std::size_t>(y)] = n;
    }

    NccSums s;
    for (int y = 0; y < h; ++y) {
        s.sa += row_sa[static_cast<std::size_t>(y)];
        s.sb += row_sb[static_cast<std::size_t>(y)];
        s.n += row_n[static_cast<std::size_t>(y)];
    }
    if (s.n == 0) return s;
    const double ma = s.sa / static_cast<double>(s.n);
    const double mb = s.sb / static_cast<double>(s.n);

    std::vector<double> row_saa(static_cast<std::size_t>(h), 0.0),
        row_sbb(static_cast<std::size_t>(h), 0.0), row_sab(static_cast<std::size_t>(h), 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y)) continue;
            for (int c = 0; c < ch; ++c) {
                const double da = a.at(x, y, c) - ma;
                const double db = b.at(x, y, c) - mb;
                saa += da * da;
                sbb += db * db;
                sab += da * db;
            }
        }
        row_saa[static_cast<std::size_t>(y)] = saa;
        row_sbb[static_cast<std::size_t>(y)] = sbb;
        row_sab[static_cast<std::size_t>(y)] = sab;
    }
    for (int y = 0; y < h; ++y) {
        s.saa += row_saa[static_cast<std::size_t>(y)];
        s.sbb += row_sbb[static_cast<std::size_t>(y)];
        s.sab += row_sab[static_cast<std::size_t>(y)];
    }
    return s;
}

void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    int stride, int pad, Tensor& out) {
    const int ic = in.dims[0], ih = in.dims[1], iw = in.dims[2];
    const int oc = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    const int oh = out.dims[1], ow = out.dims[2];

#pragma omp parallel for schedule(static)
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b.data[static_cast<std::size_t>(o)];
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int yy = oy * stride + ky - pad;
                        if (yy < 0 || yy >= ih) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xx = ox * stride + kx - pad;
                            if (xx < 0 || xx >= iw) continue;
                            acc += in.at3(i, yy, xx)
                                 * w.data[((static_cast<std::size_t>(o) * ic + i) * kh + ky) * kw + kx];
                        }
                    }
                out.at3(o, oy, ox) = acc;
            }
    }
}

void conv2d_backward(const Tensor& in, const Tensor& w, int stride, int pad,
                     const Tensor& dout, Tensor* din, Tensor* dw, Tensor* db) {
    const int ic = in.dims[0], ih = in.dims[1], iw = in.dims[2];
    const int oc = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    const int oh = dout.dims[1], ow = dout.dims[2];

    if (db) {
#pragma omp parallel for schedule(static)
        for (int o = 0; o < oc; ++o) {
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    acc += dout.at3(o, oy, ox);
            db->data[static_cast<std::size_t>(o)] = acc;
        }
    }

    if (dw) {
        // gather form: each (o,i,ky,kx) entry is reduced serially in a
        // fixed order, so the result is independent of the thread count
#pragma omp parallel for schedule(static)
        for (int o = 0; o < oc; ++o)
            for (int i = 0; i < ic; ++i)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        double acc = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int yy = oy * stride + ky - pad;
                            if (yy < 0 || yy >= ih) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int xx = ox * stride + kx - pad;
                                if (xx < 0 || xx >= iw) continue;
                                acc += in.at3(i, yy, xx) * dout.at3(o, oy, ox);
                            }
                        }
                        dw->data[((static_cast<std::size_t>(o) * ic + i) * kh + ky) * kw + kx] = acc;
                    }
    }

    if (din) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < ic; ++i)
            for (int yy = 0; yy < ih; ++yy)
                for (int xx = 0; xx < iw; ++xx) {
                    double acc = 0.0;
                    for (int o = 0; o < oc; ++o)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int num_y = yy + pad - ky;
                            if (num_y < 0 || num_y % stride != 0) continue;
                            const int oy = num_y / stride;
                            if (oy >= oh) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int num_x = xx + pad - kx;
                                if (num_x < 0 || num_x % stride != 0) continue;
                                const int ox = num_x / stride;
                                if (ox >= ow) continue;
                                acc += dout.at3(o, oy, ox)
                                     * w.data[((static_cast<std::size_t>(o) * ic + i) * kh + ky) * kw + kx];
                            }
                        }
                    din->at3(i, yy, xx) = acc;
                }
    }
}

} // namespace diffalign::kernels
