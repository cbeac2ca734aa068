#include "diffalign/diffusion.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace diffalign;

namespace {

Tensor scalar(double v) {
    Tensor t({1});
    t[0] = v;
    return t;
}

} // namespace

TEST_CASE("make_schedule") {
    const NoiseSchedule one = make_schedule(1, 0.5, 0.5);
    CHECK(one.alpha_bar_at(1) == doctest::Approx(0.5).epsilon(1e-15));

    const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    CHECK(s.beta_at(1) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(s.beta_at(100) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-15));

    // direct cumulative-product oracle
    double prod = 1.0;
    for (int t = 0; t < 100; ++t)
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 99.0);
    CHECK(s.alpha_bar_at(100) == doctest::Approx(prod).epsilon(1e-12));

    // strictly decreasing, consistent with beta to 1e-12
    double check = 1.0;
    for (int t = 1; t <= 100; ++t) {
        check *= 1.0 - s.beta_at(t);
        CHECK(std::abs(s.alpha_bar_at(t) - check) < 1e-12);
        if (t > 1) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    }

    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), InvalidParameter);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), InvalidParameter);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), InvalidParameter);
}

TEST_CASE("perturb_forward") {
    const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);

    SUBCASE("z = 0 scales by sqrt(alpha_bar)") {
        const Tensor x0 = scalar(2.0);
        const Tensor xt = perturb_forward(x0, 50, s, scalar(0.0));
        CHECK(xt[0] == doctest::Approx(std::sqrt(s.alpha_bar_at(50)) * 2.0).epsilon(1e-15));
    }

    SUBCASE("t = 1 with a tiny beta_1 barely moves x0") {
        const Tensor x0 = scalar(1.0);
        const Tensor xt = perturb_forward(x0, 1, s, scalar(0.0));
        CHECK(xt[0] == doctest::Approx(1.0).epsilon(1e-4));
    }

    SUBCASE("Monte-Carlo mean and variance") {
        Rng rng(1001);
        const int n = 100000;
        const int t = 60;
        const double x0v = 1.5;
        const Tensor x0 = scalar(x0v);
        double mean = 0.0, var = 0.0;
        std::vector<double> draws(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const Tensor xt = perturb_forward(x0, t, s, scalar(rng.normal()));
            draws[static_cast<std::size_t>(i)] = xt[0];
            mean += xt[0] / n;
        }
        for (double d : draws) var += (d - mean) * (d - mean) / n;
        CHECK(mean == doctest::Approx(std::sqrt(s.alpha_bar_at(t)) * x0v).epsilon(0.02));
        CHECK(var == doctest::Approx(1.0 - s.alpha_bar_at(t)).epsilon(0.02));
    }

    Tensor bad({2});
    CHECK_THROWS_AS(perturb_forward(scalar(0.0), 5, s, bad), ShapeMismatch);
    CHECK_THROWS_AS(perturb_forward(scalar(0.0), 0, s, scalar(0.0)), InvalidParameter);
}

TEST_CASE("oracle_score") {
    const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);

    SUBCASE("zero at the kernel mode") {
        const Tensor x0 = scalar(3.0);
        const Tensor xt = scalar(std::sqrt(s.alpha_bar_at(40)) * 3.0);
        CHECK(oracle_score(xt, x0, 40, s)[0] == doctest::Approx(0.0));
    }

    SUBCASE("hand arithmetic: alpha_bar = 0.75") {
        // -(1 - 0) / 0.25 = -4 at whichever t has alpha_bar 0.75; build a
        // single-step schedule with beta = 0.25
        const NoiseSchedule s1 = make_schedule(1, 0.25, 0.25);
        CHECK(oracle_score(scalar(1.0), scalar(0.0), 1, s1)[0] ==
              doctest::Approx(-4.0).epsilon(1e-15));
    }

    SUBCASE("matches finite differences of the log kernel") {
        const int t = 70;
        const double ab = s.alpha_bar_at(t);
        const double x0v = 0.8, xtv = 1.9;
        auto logp = [&](double x) {
            const double d = x - std::sqrt(ab) * x0v;
            return -0.5 * d * d / (1.0 - ab);
        };
        const double h = 1e-6;
        const double fd = (logp(xtv + h) - logp(xtv - h)) / (2.0 * h);
        CHECK(oracle_score(scalar(xtv), scalar(x0v), t, s)[0] ==
              doctest::Approx(fd).epsilon(1e-5));
    }

    SUBCASE("denoise identity") {
        Rng rng(7);
        const Tensor x0 = scalar(rng.normal());
        for (int t : {1, 25, 99}) {
            const Tensor z = scalar(rng.normal());
            const Tensor xt = perturb_forward(x0, t, s, z);
            const Tensor sc = oracle_score(xt, x0, t, s);
            const double ab = s.alpha_bar_at(t);
            const double recovered = (xt[0] + (1.0 - ab) * sc[0]) / std::sqrt(ab);
            CHECK(recovered == doctest::Approx(x0[0]).epsilon(1e-9));
        }
    }
}

TEST_CASE("reverse_step") {
    SUBCASE("beta -> 0 is a no-op") {
        const NoiseSchedule s = make_schedule(1, 1e-12, 1e-12);
        const Tensor out = reverse_step(scalar(0.7), scalar(0.0), 1, s, scalar(0.0));
        CHECK(out[0] == doctest::Approx(0.7).epsilon(1e-11));
    }

    SUBCASE("hand arithmetic") {
        const NoiseSchedule s = make_schedule(1, 0.1, 0.1);
        const Tensor out = reverse_step(scalar(0.0), scalar(1.0), 1, s, scalar(0.0));
        CHECK(out[0] == doctest::Approx(0.1).epsilon(1e-15));
    }

    SUBCASE("deterministic given inputs") {
        const NoiseSchedule s = make_schedule(10, 1e-3, 0.05);
        const Tensor a = reverse_step(scalar(0.4), scalar(-0.3), 5, s, scalar(1.2));
        const Tensor b = reverse_step(scalar(0.4), scalar(-0.3), 5, s, scalar(1.2));
        CHECK(a[0] == b[0]);
    }

    SUBCASE("full chain with oracle scores recovers the data distribution") {
        // each run draws x0 ~ N(mu, sigma^2) and runs the reverse chain
        // with that x0's kernel score from pure noise
        const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
        const double mu = 0.5, sigma = 0.8;
        Rng rng(2024);
        const int runs = 10000;
        double mean = 0.0, var = 0.0;
        std::vector<double> finals(static_cast<std::size_t>(runs));
        for (int r = 0; r < runs; ++r) {
            const Tensor x0 = scalar(mu + sigma * rng.normal());
            Tensor x = scalar(rng.normal());
            for (int t = 100; t >= 1; --t) {
                const Tensor sc = oracle_score(x, x0, t, s);
                const Tensor z = scalar(t > 1 ? rng.normal() : 0.0);
                x = reverse_step(x, sc, t, s, z);
            }
            finals[static_cast<std::size_t>(r)] = x[0];
            mean += x[0] / runs;
        }
        for (double f : finals) var += (f - mean) * (f - mean) / runs;
        CHECK(mean == doctest::Approx(mu).epsilon(0.05));
        CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.05));
    }

    SUBCASE("oracle round trip concentrates near x0") {
        const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
        Rng rng(55);
        const Tensor x0 = scalar(2.5);
        double err = 0.0;
        const int runs = 1000;
        for (int r = 0; r < runs; ++r) {
            Tensor x = scalar(rng.normal());
            for (int t = 100; t >= 1; --t) {
                const Tensor z = scalar(t > 1 ? rng.normal() : 0.0);
                x = reverse_step(x, oracle_score(x, x0, t, s), t, s, z);
            }
            err += std::abs(x[0] - x0[0]) / runs;
        }
        CHECK(err < 3.0 * std::sqrt(1.0 - s.alpha_bar_at(1)));
    }
}

TEST_CASE("langevin_step") {
    SUBCASE("eps = 0 leaves x unchanged") {
        const Tensor out = langevin_step(scalar(1.3), scalar(5.0), 0.0, scalar(2.0));
        CHECK(out[0] == 1.3);
    }

    SUBCASE("z = 0 is gradient ascent on log p") {
        const Tensor out = langevin_step(scalar(1.0), scalar(-2.0), 0.1, scalar(0.0));
        CHECK(out[0] == doctest::Approx(1.0 - 0.2).epsilon(1e-15));
    }

    SUBCASE("annealed chain samples a standard normal") {
        Rng rng(31415);
        const int runs = 10000;
        std::vector<double> finals(static_cast<std::size_t>(runs));
        double mean = 0.0;
        for (int r = 0; r < runs; ++r) {
            Tensor x = scalar(rng.normal() * 2.0);
            for (int k = 0; k < 200; ++k) {
                const double eps = 0.2 * std::pow(0.02 / 0.2, k / 199.0);
                // score of N(0,1) is -x
                Tensor sc = scalar(-x[0]);
                x = langevin_step(x, sc, eps, scalar(rng.normal()));
            }
            finals[static_cast<std::size_t>(r)] = x[0];
            mean += x[0] / runs;
        }
        double var = 0.0;
        for (double f : finals) var += (f - mean) * (f - mean) / runs;
        CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.05));
    }

    CHECK_THROWS_AS(langevin_step(scalar(0), scalar(0), -0.1, scalar(0)), InvalidParameter);
}
