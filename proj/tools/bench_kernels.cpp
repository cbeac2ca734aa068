// Compares the OpenMP kernels against the serial reference versions:
// wall time, speedup, and max abs deviation on identical inputs.

#include "diffalign/kernels.hpp"
#include "diffalign/random.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace diffalign;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double omp_ms, double max_diff) {
    std::printf("%-16s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   maxdiff %.3e\n",
                name, serial_ms, omp_ms, serial_ms / omp_ms, max_diff);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled; both columns run serial code\n");
#endif
    Rng rng(42);
    const int reps = 20;

    // warp
    {
        const int n = 512;
        ImageBuffer src(n, n, 1);
        for (double& v : src.data) v = rng.uniform();
        Homography H = Homography::similarity(1.1, 0.2, 5.0, -3.0, n / 2.0, n / 2.0);
        H.h[6] = 1e-4;
        const Homography inv_h = invert(normalize(H));
        ImageBuffer out_s(n, n, 1), out_p(n, n, 1);
        ValidityMask m_s(n, n), m_p(n, n);
        const double ts = time_ms([&] { ref::warp_bilinear(src, inv_h, nullptr, out_s, m_s); }, reps);
        const double tp = time_ms([&] { kernels::warp_bilinear(src, inv_h, nullptr, out_p, m_p); }, reps);
        report("warp_bilinear", ts, tp, max_abs_diff(out_s.data, out_p.data));
    }

    // gaussian blur
    {
        const int n = 512;
        ImageBuffer img(n, n, 1);
        for (double& v : img.data) v = rng.uniform();
        ImageBuffer out_s, out_p;
        const double ts = time_ms([&] { out_s = ref::gaussian_blur(img, 2.0); }, reps);
        const double tp = time_ms([&] { out_p = kernels::gaussian_blur(img, 2.0); }, reps);
        report("gaussian_blur", ts, tp, max_abs_diff(out_s.data, out_p.data));
    }

    // ncc sums
    {
        const int n = 1024;
        ImageBuffer a(n, n, 1), b(n, n, 1);
        ValidityMask m(n, n, 1);
        for (double& v : a.data) v = rng.uniform();
        for (double& v : b.data) v = rng.uniform();
        NccSums s1, s2;
        const double ts = time_ms([&] { s1 = ref::ncc_sums(a, b, m); }, reps);
        const double tp = time_ms([&] { s2 = kernels::ncc_sums(a, b, m); }, reps);
        const double ncc1 = s1.sab / std::sqrt(s1.saa * s1.sbb);
        const double ncc2 = s2.sab / std::sqrt(s2.saa * s2.sbb);
        report("ncc_sums", ts, tp, std::abs(ncc1 - ncc2));
    }

    // conv forward + backward
    {
        Tensor in({16, 64, 64}), w({32, 16, 3, 3}), b({32});
        for (double& v : in.data) v = rng.normal();
        for (double& v : w.data) v = 0.1 * rng.normal();
        for (double& v : b.data) v = 0.1 * rng.normal();
        Tensor out_s({32, 32, 32}), out_p({32, 32, 32});
        const double ts = time_ms([&] { ref::conv2d_forward(in, w, b, 2, 1, out_s); }, reps);
        const double tp = time_ms([&] { kernels::conv2d_forward(in, w, b, 2, 1, out_p); }, reps);
        report("conv2d_fwd", ts, tp, max_abs_diff(out_s.data, out_p.data));

        Tensor dout({32, 32, 32});
        for (double& v : dout.data) v = rng.normal();
        Tensor din_s(in.dims), dw_s(w.dims), db_s(b.dims);
        Tensor din_p(in.dims), dw_p(w.dims), db_p(b.dims);
        const double tbs =
            time_ms([&] { ref::conv2d_backward(in, w, 2, 1, dout, &din_s, &dw_s, &db_s); }, reps);
        const double tbp =
            time_ms([&] { kernels::conv2d_backward(in, w, 2, 1, dout, &din_p, &dw_p, &db_p); }, reps);
        const double d = std::max({max_abs_diff(din_s.data, din_p.data),
                                   max_abs_diff(dw_s.data, dw_p.data),
                                   max_abs_diff(db_s.data, db_p.data)});
        report("conv2d_bwd", tbs, tbp, d);
    }
    return 0;
}
