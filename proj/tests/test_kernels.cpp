// Cross-checks of the OpenMP kernels against the serial reference
// implementations.

#include "diffalign/kernels.hpp"

#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"

using namespace diffalign;

TEST_CASE("warp kernels agree bitwise") {
    Rng rng(60);
    const ImageBuffer src = testutil::random_image(48, 40, rng);
    Homography H = Homography::similarity(1.2, 0.4, 3, -2, 24, 20);
    H.h[6] = 1e-3;
    const Homography inv_h = invert(normalize(H));

    DisplacementField f(48, 40);
    for (double& u : f.u) u = rng.normal();
    for (double& v : f.v) v = rng.normal();

    ImageBuffer out_a(48, 40, 1), out_b(48, 40, 1);
    ValidityMask m_a(48, 40), m_b(48, 40);
    kernels::warp_bilinear(src, inv_h, &f, out_a, m_a);
    ref::warp_bilinear(src, inv_h, &f, out_b, m_b);
    CHECK(out_a.data == out_b.data);
    CHECK(m_a.valid == m_b.valid);
}

TEST_CASE("blur kernels agree bitwise") {
    Rng rng(61);
    const ImageBuffer img = testutil::random_image(33, 27, rng);
    const ImageBuffer a = kernels::gaussian_blur(img, 1.7);
    const ImageBuffer b = ref::gaussian_blur(img, 1.7);
    CHECK(a.data == b.data);
}

TEST_CASE("ncc sums agree to reduction tolerance") {
    Rng rng(62);
    const ImageBuffer a = testutil::random_image(64, 64, rng);
    const ImageBuffer b = testutil::random_image(64, 64, rng);
    ValidityMask mask(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) mask.set(x, y, rng.uniform() < 0.8);
    const NccSums s1 = kernels::ncc_sums(a, b, mask);
    const NccSums s2 = ref::ncc_sums(a, b, mask);
    CHECK(s1.n == s2.n);
    CHECK(s1.sa == doctest::Approx(s2.sa).epsilon(1e-13));
    CHECK(s1.sab == doctest::Approx(s2.sab).epsilon(1e-12));
    CHECK(s1.saa == doctest::Approx(s2.saa).epsilon(1e-12));
    CHECK(s1.sbb == doctest::Approx(s2.sbb).epsilon(1e-12));
}

TEST_CASE("conv kernels agree") {
    Rng rng(63);
    for (int stride : {1, 2}) {
        Tensor in = testutil::random_tensor({3, 12, 10}, rng);
        Tensor w = testutil::random_tensor({5, 3, 3, 3}, rng);
        Tensor b = testutil::random_tensor({5}, rng);
        const int oh = (12 + 2 - 3) / stride + 1;
        const int ow = (10 + 2 - 3) / stride + 1;
        Tensor out_a({5, oh, ow}), out_b({5, oh, ow});
        kernels::conv2d_forward(in, w, b, stride, 1, out_a);
        ref::conv2d_forward(in, w, b, stride, 1, out_b);
        for (std::size_t i = 0; i < out_a.size(); ++i)
            CHECK(out_a[i] == doctest::Approx(out_b[i]).epsilon(1e-13));

        Tensor dout = testutil::random_tensor({5, oh, ow}, rng);
        Tensor din_a(in.dims), dw_a(w.dims), db_a(b.dims);
        Tensor din_b(in.dims), dw_b(w.dims), db_b(b.dims);
        kernels::conv2d_backward(in, w, stride, 1, dout, &din_a, &dw_a, &db_a);
        ref::conv2d_backward(in, w, stride, 1, dout, &din_b, &dw_b, &db_b);
        for (std::size_t i = 0; i < din_a.size(); ++i)
            CHECK(din_a[i] == doctest::Approx(din_b[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < dw_a.size(); ++i)
            CHECK(dw_a[i] == doctest::Approx(dw_b[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < db_a.size(); ++i)
            CHECK(db_a[i] == doctest::Approx(db_b[i]).epsilon(1e-12));
    }
}

TEST_CASE("omp kernels are run-to-run deterministic") {
    Rng rng(64);
    const ImageBuffer a = testutil::random_image(96, 96, rng);
    const ImageBuffer b = testutil::random_image(96, 96, rng);
    ValidityMask mask(96, 96, 1);
    const NccSums s1 = kernels::ncc_sums(a, b, mask);
    const NccSums s2 = kernels::ncc_sums(a, b, mask);
    CHECK(s1.sab == s2.sab);
    CHECK(s1.saa == s2.saa);

    const ImageBuffer g1 = kernels::gaussian_blur(a, 2.2);
    const ImageBuffer g2 = kernels::gaussian_blur(a, 2.2);
    CHECK(g1.data == g2.data);
}
