#pragma once

#include "diffalign/geometry.hpp"
#include "diffalign/image.hpp"
#include "diffalign/tensor.hpp"

namespace diffalign {

/// Sums over masked pixels used by normalized cross-correlation.
/// sa/sb are plain sums; the centered second-order sums are computed
/// against the caller-supplied means in a second pass.
struct NccSums {
    double sa = 0.0, sb = 0.0;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    std::size_t n = 0;
};

// Hot data-parallel kernels. The `kernels` namespace holds the OpenMP
// implementations used by the product path; `ref` holds plain serial
// versions kept for testing and benchmarking. Reductions in `kernels`
// combine fixed per-row partials so results do not depend on the
// thread count.
namespace kernels {

/// Inverse bilinear warp. For every output pixel p the source is sampled
/// at inv_h * (p + field(p)); field == nullptr means a pure global warp.
/// Out-of-bounds (or near-degenerate denominator) samples produce 0 with
/// mask = false.
void warp_bilinear(const ImageBuffer& src, const Homography& inv_h,
                   const DisplacementField* field,
                   ImageBuffer& out, ValidityMask& mask);

/// Separable Gaussian blur, replicated borders, kernel radius ceil(3*sigma).
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

NccSums ncc_sums(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask);

/// 2-D convolution: in (IC,H,W), w (OC,IC,KH,KW), b (OC) -> out (OC,OH,OW).
/// Zero padding `pad`, stride `stride`.
void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    int stride, int pad, Tensor& out);

/// Gradients of conv2d_forward. Any of din/dw/db may be null to skip.
void conv2d_backward(const Tensor& in, const Tensor& w, int stride, int pad,
                     const Tensor& dout, Tensor* din, Tensor* dw, Tensor* db);

} // namespace kernels

namespace ref {

void warp_bilinear(const ImageBuffer& src, const Homography& inv_h,
                   const DisplacementField* field,
                   ImageBuffer& out, ValidityMask& mask);

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

NccSums ncc_sums(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask);

void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    int stride, int pad, Tensor& out);

void conv2d_backward(const Tensor& in, const Tensor& w, int stride, int pad,
                     const Tensor& dout, Tensor* din, Tensor* dw, Tensor* db);

} // namespace ref

/// Shared sampling helper: bilinear read with in-bounds flag.
/// A sample is in bounds iff 0 <= x <= width-1 and 0 <= y <= height-1.
bool sample_bilinear_at(const ImageBuffer& img, double x, double y, double* out_values);

std::vector<double> gaussian_taps(double sigma);

} // namespace diffalign
