#include "diffalign/errors.hpp"
#include "diffalign/losses.hpp"
#include "diffalign/nets.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "test_helpers.hpp"

using namespace diffalign;

namespace {

HomographyNetConfig small_h_cfg() {
    HomographyNetConfig c;
    c.img_size = 32;
    return c;
}

DisplacementNetConfig small_v_cfg() {
    DisplacementNetConfig c;
    c.field_size = 8;
    c.image_size = 32;
    return c;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("time embedding is bounded and deterministic") {
    const Tensor a = time_embedding(17, 32);
    const Tensor b = time_embedding(17, 32);
    CHECK(a.data == b.data);
    CHECK(a.size() == 32);
    for (double v : a.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(time_embedding(18, 32).data != a.data);
}

TEST_CASE("zero-initialized heads give zero scores") {
    Rng rng(70);
    HomographyScoreNet hnet(small_h_cfg());
    hnet.init_params(rng);
    const ImageBuffer src = testutil::random_image(32, 32, rng);
    const ImageBuffer dst = testutil::random_image(32, 32, rng);
    const Tensor h = testutil::random_tensor({9}, rng);
    const Tensor out = hnet.forward(src, dst, h, 10);
    for (double v : out.data) CHECK(v == 0.0);

    DisplacementScoreNet vnet(small_v_cfg());
    vnet.init_params(rng);
    const Tensor vs = testutil::random_tensor({2, 8, 8}, rng);
    const Tensor vout = vnet.forward(src, dst, vs, 100);
    for (double v : vout.data) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic and stateless") {
    Rng rng(71);
    HomographyScoreNet net(small_h_cfg());
    net.init_random(rng);
    const ImageBuffer src = testutil::random_image(32, 32, rng);
    const ImageBuffer dst = testutil::random_image(32, 32, rng);
    const Tensor h = testutil::random_tensor({9}, rng);
    const Tensor a = net.forward(src, dst, h, 42);
    const Tensor b = net.forward(src, dst, h, 42);
    CHECK(a.data == b.data);

    // cached-embedding path equals the direct path bitwise
    const Tensor c = net.forward_cached(net.encode(src), net.encode(dst), h, 42);
    CHECK(c.data == a.data);
}

TEST_CASE("backward requires a recorded forward") {
    Rng rng(72);
    HomographyScoreNet net(small_h_cfg());
    net.init_random(rng);
    Tensor g({9});
    CHECK_THROWS_AS(net.backward(g), NoRecordedForward);
}

TEST_CASE("zero loss gradient produces zero parameter gradients") {
    Rng rng(73);
    DisplacementScoreNet net(small_v_cfg());
    net.init_random(rng);
    const ImageBuffer a = testutil::random_image(32, 32, rng);
    const ImageBuffer b = testutil::random_image(32, 32, rng);
    const Tensor vs = testutil::random_tensor({2, 8, 8}, rng);
    net.params().zero_grads();
    net.forward_train(a, b, vs, 5);
    net.backward(Tensor({2, 8, 8}));
    CHECK(net.params().grad_norm() == 0.0);
}

TEST_CASE("backward is linear in the loss gradient") {
    Rng rng(74);
    HomographyScoreNet net(small_h_cfg());
    net.init_random(rng);
    const ImageBuffer a = testutil::random_image(32, 32, rng);
    const ImageBuffer b = testutil::random_image(32, 32, rng);
    const Tensor h = testutil::random_tensor({9}, rng);
    Tensor g = testutil::random_tensor({9}, rng);

    net.params().zero_grads();
    net.forward_train(a, b, h, 3);
    net.backward(g);
    std::vector<double> g1;
    for (const auto& e : net.params().entries())
        g1.insert(g1.end(), e.grad.data.begin(), e.grad.data.end());

    Tensor g2 = g;
    for (double& v : g2.data) v *= 2.0; // power of two keeps scaling exact
    net.params().zero_grads();
    net.forward_train(a, b, h, 3);
    net.backward(g2);
    std::size_t k = 0;
    for (const auto& e : net.params().entries())
        for (double v : e.grad.data) CHECK(v == 2.0 * g1[k++]);
}

TEST_CASE("gradient check passes at 1e-4 and the corrupt hook fails") {
    const GradCheckReport rep = grad_check(12345, 60, 1e-4);
    for (const auto& e : rep.per_kind) {
        CAPTURE(e.kind);
        CHECK(e.checked >= 60);
        CHECK(e.max_rel_err < 1e-4);
    }
    CHECK(rep.pass);
    // every layer kind used by the nets is represented
    CHECK(rep.per_kind.size() == 4);

    CorruptSpec corrupt;
    corrupt.param_name = "trunk.l1.w";
    corrupt.index = 3;
    corrupt.delta = 1e-2;
    const GradCheckReport bad = grad_check(12345, 60, 1e-4, corrupt);
    CHECK_FALSE(bad.pass);
}

TEST_CASE("adamw") {
    SUBCASE("zero grads and zero decay leave params unchanged") {
        ParamStore p;
        p.add("w", "fc_w", {2, 2});
        p.value("w").data = {1.0, -2.0, 3.0, 0.5};
        AdamConfig cfg;
        cfg.weight_decay = 0.0;
        const std::vector<double> before = p.value("w").data;
        adamw_step(p, cfg);
        CHECK(p.value("w").data == before);
    }

    SUBCASE("single scalar first step matches the closed form") {
        ParamStore p;
        p.add("w", "fc_w", {1});
        p.value("w")[0] = 1.0;
        p.grad("w")[0] = 0.5;
        AdamConfig cfg;
        cfg.weight_decay = 0.0;
        adamw_step(p, cfg);
        const double m = (1.0 - cfg.beta1) * 0.5;
        const double v = (1.0 - cfg.beta2) * 0.25;
        const double mhat = m / (1.0 - cfg.beta1);
        const double vhat = v / (1.0 - cfg.beta2);
        const double expect = 1.0 - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        CHECK(p.value("w")[0] == doctest::Approx(expect).epsilon(1e-15));
    }

    SUBCASE("decay only scales by (1 - lr*wd)") {
        ParamStore p;
        p.add("w", "fc_w", {1});
        p.value("w")[0] = 2.0;
        AdamConfig cfg; // zero grad
        adamw_step(p, cfg);
        CHECK(p.value("w")[0] == doctest::Approx(2.0 * (1.0 - cfg.lr * cfg.weight_decay))
                                      .epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round trip") {
    testutil::TempDir dir("ckpt");
    Rng rng(75);
    ModelBundle bundle(small_h_cfg(), small_v_cfg());
    bundle.h_net.init_random(rng);
    bundle.v_net.init_random(rng);
    bundle.sched_h = make_schedule(100, 1e-4, 0.02);
    bundle.sched_v = make_schedule(500, 1e-4, 0.02);
    bundle.h_mean = {0.1, 0, 0, 0, 0.1, 0, 0, 0, 0};
    bundle.h_std = {1, 1, 8, 1, 1, 8, 0.001, 0.001, 0.001};
    bundle.train_step = 17;

    const ImageBuffer src = testutil::random_image(32, 32, rng);
    const ImageBuffer dst = testutil::random_image(32, 32, rng);
    const Tensor h = testutil::random_tensor({9}, rng);

    const std::string path = dir.sub("m.ckpt");
    save_checkpoint(path, bundle, "cafebabe");
    // saving committed the live parameters to f32, so the loaded model
    // reproduces the live model's outputs bit for bit
    const Tensor live = bundle.h_net.forward(src, dst, h, 9);
    ModelBundle loaded = load_checkpoint(path);
    const Tensor from_disk = loaded.h_net.forward(src, dst, h, 9);
    CHECK(live.data == from_disk.data);
    CHECK(loaded.train_step == 17);
    CHECK(loaded.h_std[2] == doctest::Approx(8.0));
    CHECK(loaded.sched_v.T == 500);
    CHECK(loaded.sched_v.alpha_bar == bundle.sched_v.alpha_bar);

    // a save/load cycle is idempotent at the byte level
    const std::string path2 = dir.sub("m2.ckpt");
    save_checkpoint(path2, loaded, "cafebabe");
    CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("net memorizes a frozen toy target") {
    // mean squared residual against the oracle target must drop by 90%
    Rng rng(76);
    HomographyScoreNet net(small_h_cfg());
    net.init_params(rng);
    const NoiseSchedule sched = make_schedule(50, 1e-4, 0.02);

    const ImageBuffer src = testutil::random_image(32, 32, rng);
    const ImageBuffer dst = testutil::random_image(32, 32, rng);

    // frozen probe set
    struct Probe {
        Tensor xt, z;
        int t;
    };
    std::vector<Probe> probes;
    Tensor x0 = testutil::random_tensor({9}, rng);
    for (int i = 0; i < 16; ++i) {
        Probe p;
        p.t = 1 + rng.uniform_int(50);
        p.z = testutil::random_tensor({9}, rng);
        p.xt = perturb_forward(x0, p.t, sched, p.z);
        probes.push_back(std::move(p));
    }
    auto residual = [&]() {
        double acc = 0.0;
        for (const auto& p : probes)
            acc += loss_score_h(net.forward(src, dst, p.xt, p.t), p.z, p.t, sched);
        return acc / probes.size();
    };

    const double init = residual();
    AdamConfig adam;
    adam.lr = 3e-3;
    adam.weight_decay = 0.0;
    for (int step = 0; step < 600; ++step) {
        const auto& p = probes[static_cast<std::size_t>(step) % probes.size()];
        net.params().zero_grads();
        const Tensor out = net.forward_train(src, dst, p.xt, p.t);
        net.backward(loss_score_grad(out, p.z, p.t, sched));
        adamw_step(net.params(), adam);
    }
    const double trained = residual();
    CHECK(trained < 0.1 * init);
}
