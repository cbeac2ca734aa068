#include "diffalign/errors.hpp"
#include "diffalign/geometry.hpp"
#include "diffalign/random.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace diffalign;

namespace {

Homography random_homography(Rng& rng) {
    // similarity plus mild perspective; always well-conditioned
    Homography H = Homography::similarity(rng.uniform(0.7, 1.4), rng.uniform(-0.6, 0.6),
                                          rng.uniform(-10, 10), rng.uniform(-10, 10),
                                          32.0, 32.0);
    H.h[6] = rng.uniform(-2e-3, 2e-3);
    H.h[7] = rng.uniform(-2e-3, 2e-3);
    return H;
}

} // namespace

TEST_CASE("apply_homography basics") {
    const Homography id = Homography::identity();
    const Point2 p = apply_homography(id, {5, 7});
    CHECK(p.x == 5.0);
    CHECK(p.y == 7.0);

    const Point2 q = apply_homography(Homography::translation(3, 4), {0, 0});
    CHECK(q.x == 3.0);
    CHECK(q.y == 4.0);

    // independent rational-function evaluation: d = 0.01*10 + 1 = 1.1
    Homography H;
    H.h = {1, 0, 0, 0, 1, 0, 0.01, 0, 1};
    const Point2 r = apply_homography(H, {10, 0});
    CHECK(r.x == doctest::Approx(10.0 / 1.1).epsilon(1e-12));
    CHECK(r.y == doctest::Approx(0.0));
}

TEST_CASE("apply_homography degenerate denominator") {
    Homography H;
    H.h = {1, 0, 0, 0, 1, 0, 1, 0, 0}; // d = x
    CHECK_THROWS_AS(apply_homography(H, {0, 5}), DegenerateProjection);
}

TEST_CASE("compose matches pointwise application") {
    CHECK(compose(Homography::identity(), Homography::translation(2, 3)).h ==
          Homography::translation(2, 3).h);
    const Homography t = compose(Homography::translation(1, 0), Homography::translation(0, 1));
    CHECK(t.h == Homography::translation(1, 1).h);

    Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        const Homography A = random_homography(rng);
        const Homography B = random_homography(rng);
        const Homography C = compose(A, B);
        // matrix-product oracle, written out independently
        std::array<double, 9> M{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                M[3 * r + c] = A.h[3 * r + 0] * B.h[0 + c] + A.h[3 * r + 1] * B.h[3 + c]
                             + A.h[3 * r + 2] * B.h[6 + c];
        for (int i = 0; i < 9; ++i)
            CHECK(C.h[i] == doctest::Approx(M[i] / M[8]).epsilon(1e-12));

        for (int k = 0; k < 20; ++k) {
            const Point2 p{rng.uniform(0, 64), rng.uniform(0, 64)};
            const Point2 via = apply_homography(A, apply_homography(B, p));
            const Point2 direct = apply_homography(C, p);
            CHECK(std::abs(via.x - direct.x) < 1e-9);
            CHECK(std::abs(via.y - direct.y) < 1e-9);
        }
    }
}

TEST_CASE("compose associativity") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const Homography A = random_homography(rng);
        const Homography B = random_homography(rng);
        const Homography C = random_homography(rng);
        const Homography left = compose(compose(A, B), C);
        const Homography right = compose(A, compose(B, C));
        for (int i = 0; i < 9; ++i)
            CHECK(left.h[i] == doctest::Approx(right.h[i]).epsilon(1e-9));
    }
}

TEST_CASE("invert") {
    CHECK(invert(Homography::identity()).h == Homography::identity().h);
    const Homography ti = invert(Homography::translation(3, 4));
    CHECK(ti.h[2] == doctest::Approx(-3.0));
    CHECK(ti.h[5] == doctest::Approx(-4.0));

    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const Homography H = random_homography(rng);
        const Homography round = normalize(compose(H, invert(H)));
        const Homography id = Homography::identity();
        for (int i = 0; i < 9; ++i)
            CHECK(std::abs(round.h[i] - id.h[i]) < 1e-8);
    }

    Homography singular;
    singular.h = {1, 2, 3, 2, 4, 6, 0, 0, 1}; // rank-deficient upper block
    CHECK_THROWS_AS(invert(singular), SingularHomography);
}

TEST_CASE("apply/invert round-trips 1000 points") {
    Rng rng(4242);
    const Homography H = random_homography(rng);
    const Homography Hi = invert(H);
    for (int k = 0; k < 1000; ++k) {
        const Point2 p{rng.uniform(0, 64), rng.uniform(0, 64)};
        const Point2 back = apply_homography(Hi, apply_homography(H, p));
        CHECK(std::abs(back.x - p.x) < 1e-6);
        CHECK(std::abs(back.y - p.y) < 1e-6);
    }
}

TEST_CASE("p_norm_distance") {
    const PixelGrid pts = PixelGrid::lattice20(64, 64);
    CHECK(pts.points.size() == 20);

    const Homography id = Homography::identity();
    CHECK(p_norm_distance(id, id, pts, 2.0) == 0.0);

    // every point moves by (3,4): distance 5 each, 20 points
    CHECK(p_norm_distance(Homography::translation(3, 4), id, pts, 2.0) ==
          doctest::Approx(100.0).epsilon(1e-12));

    // brute-force per-point oracle on a random projective pair
    Rng rng(5150);
    const Homography A = random_homography(rng);
    const Homography B = random_homography(rng);
    double expect = 0.0;
    for (const Point2& q : pts.points) {
        const Point2 a = apply_homography(A, q);
        const Point2 b = apply_homography(B, q);
        expect += std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
    }
    CHECK(p_norm_distance(A, B, pts, 2.0) == doctest::Approx(expect).epsilon(1e-12));

    // symmetric for p = 2
    CHECK(p_norm_distance(A, B, pts, 2.0) ==
          doctest::Approx(p_norm_distance(B, A, pts, 2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(p_norm_distance(A, B, pts, 0.5), InvalidParameter);
}

TEST_CASE("normalize is idempotent bitwise") {
    Rng rng(31337);
    for (int trial = 0; trial < 20; ++trial) {
        Homography H = random_homography(rng);
        H.h[8] = rng.uniform(0.5, 2.0);
        const Homography n1 = normalize(H);
        const Homography n2 = normalize(n1);
        CHECK(n1.h == n2.h);
    }
}

TEST_CASE("homography serialization round trip") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "diffalign_test_h.admh").string();
    Rng rng(8);
    const Homography H = random_homography(rng);
    save_homography(path, H);
    const Homography L = load_homography(path);
    CHECK(L.h == H.h);

    // magic check
    std::ifstream f(path, std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    CHECK(std::string(magic, 4) == "ADMH");
}
