#include "diffalign/nets.hpp"

#include "diffalign/errors.hpp"
#include "diffalign/imaging.hpp"
#include "diffalign/kernels.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace diffalign {

using nlohmann::json;

// ---------------------------------------------------------------- params

Tensor& ParamStore::add(const std::string& name, const std::string& kind,
                        std::vector<int> dims) {
    Entry e;
    e.name = name;
    e.kind = kind;
    e.value = Tensor(dims);
    e.grad = Tensor(dims);
    e.m = Tensor(dims);
    e.v = Tensor(std::move(dims));
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return e;
    throw InvalidParameter("ParamStore: unknown parameter " + name);
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw InvalidParameter("ParamStore: unknown parameter " + name);
}

void ParamStore::zero_grads() {
    for (auto& e : entries_)
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

double ParamStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& e : entries_)
        for (double g : e.grad.data) acc += g * g;
    return std::sqrt(acc);
}

void adamw_step(ParamStore& params, const AdamConfig& cfg) {
    params.adam_step += 1;
    const double t = static_cast<double>(params.adam_step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& e : params.entries()) {
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            e.value[i] -= cfg.lr * cfg.weight_decay * e.value[i];
        }
    }
}

Tensor time_embedding(int t, int dim) {
    Tensor e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        e[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
        e[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return e;
}

// ---------------------------------------------------------------- layers

namespace {

void axpy(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor silu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v * sigmoid(v);
    return y;
}

/// dL/dx given pre-activation x and dL/dy.
Tensor silu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        dx[i] = dy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
    return dx;
}

int conv_out_size(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

Tensor conv_fwd(const Tensor& in, const Tensor& w, const Tensor& b, int stride, int pad) {
    Tensor out({w.dims[0], conv_out_size(in.dims[1], w.dims[2], stride, pad),
                conv_out_size(in.dims[2], w.dims[3], stride, pad)});
    kernels::conv2d_forward(in, w, b, stride, pad, out);
    return out;
}

Tensor linear_fwd(const Tensor& w, const Tensor& b, const Tensor& x) {
    const int out = w.dims[0], in = w.dims[1];
    Tensor y({out});
    for (int o = 0; o < out; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        const std::size_t row = static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += w[row + i] * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

void linear_bwd(const Tensor& w, const Tensor& x, const Tensor& dy,
                Tensor& dw, Tensor& db, Tensor* dx) {
    const int out = w.dims[0], in = w.dims[1];
    for (int o = 0; o < out; ++o) {
        const double g = dy[static_cast<std::size_t>(o)];
        db[static_cast<std::size_t>(o)] = g;
        const std::size_t row = static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) dw[row + i] = g * x[static_cast<std::size_t>(i)];
    }
    if (dx) {
        for (int i = 0; i < in; ++i) {
            double acc = 0.0;
            for (int o = 0; o < out; ++o)
                acc += w[static_cast<std::size_t>(o) * in + i] * dy[static_cast<std::size_t>(o)];
            (*dx)[static_cast<std::size_t>(i)] = acc;
        }
    }
}

Tensor upsample2x(const Tensor& in) {
    Tensor out({in.dims[0], in.dims[1] * 2, in.dims[2] * 2});
    for (int c = 0; c < in.dims[0]; ++c)
        for (int y = 0; y < in.dims[1]; ++y)
            for (int x = 0; x < in.dims[2]; ++x) {
                const double v = in.at3(c, y, x);
                out.at3(c, 2 * y, 2 * x) = v;
                out.at3(c, 2 * y, 2 * x + 1) = v;
                out.at3(c, 2 * y + 1, 2 * x) = v;
                out.at3(c, 2 * y + 1, 2 * x + 1) = v;
            }
    return out;
}

Tensor upsample2x_backward(const Tensor& dout) {
    Tensor din({dout.dims[0], dout.dims[1] / 2, dout.dims[2] / 2});
    for (int c = 0; c < din.dims[0]; ++c)
        for (int y = 0; y < din.dims[1]; ++y)
            for (int x = 0; x < din.dims[2]; ++x)
                din.at3(c, y, x) = dout.at3(c, 2 * y, 2 * x) + dout.at3(c, 2 * y, 2 * x + 1)
                                 + dout.at3(c, 2 * y + 1, 2 * x) + dout.at3(c, 2 * y + 1, 2 * x + 1);
    return din;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out({a.dims[0] + b.dims[0], a.dims[1], a.dims[2]});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

void split_channels(const Tensor& d, int a_channels, Tensor& da, Tensor& db) {
    da = Tensor({a_channels, d.dims[1], d.dims[2]});
    db = Tensor({d.dims[0] - a_channels, d.dims[1], d.dims[2]});
    std::copy(d.data.begin(), d.data.begin() + static_cast<std::ptrdiff_t>(da.size()), da.data.begin());
    std::copy(d.data.begin() + static_cast<std::ptrdiff_t>(da.size()), d.data.end(), db.data.begin());
}

void init_tensor(Tensor& t, Rng& rng, double scale) {
    for (double& v : t.data) v = scale * rng.normal();
}

double fan_in_scale(const Tensor& w, bool conv) {
    const double fan = conv
        ? static_cast<double>(w.dims[1]) * w.dims[2] * w.dims[3]
        : static_cast<double>(w.dims[1]);
    return std::sqrt(2.0 / fan);
}

} // namespace

// ------------------------------------------------- homography score net

struct HomographyScoreNet::Tape {
    struct Enc {
        Tensor x, a1, h1, a2, h2, a3, h3, flat, emb;
    };
    Enc enc[2];
    Tensor cat, a1, h1, a2, h2;
};

HomographyScoreNet::HomographyScoreNet(const HomographyNetConfig& cfg) : cfg_(cfg) {
    if (cfg.img_size % 8 != 0)
        throw InvalidParameter("HomographyScoreNet: img_size must be divisible by 8");
    const int s = cfg.img_size / 8;
    params_.add("enc.c1.w", "conv_w", {cfg.enc_c1, 1, 3, 3});
    params_.add("enc.c1.b", "conv_b", {cfg.enc_c1});
    params_.add("enc.c2.w", "conv_w", {cfg.enc_c2, cfg.enc_c1, 3, 3});
    params_.add("enc.c2.b", "conv_b", {cfg.enc_c2});
    params_.add("enc.c3.w", "conv_w", {cfg.enc_c3, cfg.enc_c2, 3, 3});
    params_.add("enc.c3.b", "conv_b", {cfg.enc_c3});
    params_.add("enc.fc.w", "fc_w", {cfg.embed_dim, cfg.enc_c3 * s * s});
    params_.add("enc.fc.b", "fc_b", {cfg.embed_dim});
    const int cat_dim = 2 * cfg.embed_dim + 9 + cfg.time_dim;
    params_.add("trunk.l1.w", "fc_w", {cfg.hidden, cat_dim});
    params_.add("trunk.l1.b", "fc_b", {cfg.hidden});
    params_.add("trunk.l2.w", "fc_w", {cfg.hidden, cfg.hidden});
    params_.add("trunk.l2.b", "fc_b", {cfg.hidden});
    params_.add("head.w", "fc_w", {9, cfg.hidden});
    params_.add("head.b", "fc_b", {9});
}

void HomographyScoreNet::init_params(Rng& rng) {
    for (auto& e : params_.entries()) {
        if (e.name.rfind("head.", 0) == 0) {
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
        } else if (e.kind == "conv_w") {
            init_tensor(e.value, rng, fan_in_scale(e.value, true));
        } else if (e.kind == "fc_w") {
            init_tensor(e.value, rng, fan_in_scale(e.value, false));
        } else {
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
        }
    }
}

void HomographyScoreNet::init_random(Rng& rng) {
    for (auto& e : params_.entries()) {
        if (e.kind == "conv_w")
            init_tensor(e.value, rng, fan_in_scale(e.value, true));
        else if (e.kind == "fc_w")
            init_tensor(e.value, rng, fan_in_scale(e.value, false));
        else
            init_tensor(e.value, rng, 0.1);
    }
}

Tensor HomographyScoreNet::image_to_tensor(const ImageBuffer& img) const {
    ImageBuffer g = to_gray(img);
    if (g.width != cfg_.img_size || g.height != cfg_.img_size)
        g = resize_bilinear(g, cfg_.img_size, cfg_.img_size);
    Tensor t({1, cfg_.img_size, cfg_.img_size});
    for (std::size_t i = 0; i < g.data.size(); ++i)
        t[i] = 2.0 * g.data[i] - 1.0;
    return t;
}

Tensor HomographyScoreNet::encode_impl(const Tensor& x, Tape* tape, int slot) const {
    const Tensor a1 = conv_fwd(x, params_.value("enc.c1.w"), params_.value("enc.c1.b"), 2, 1);
    const Tensor h1 = silu(a1);
    const Tensor a2 = conv_fwd(h1, params_.value("enc.c2.w"), params_.value("enc.c2.b"), 2, 1);
    const Tensor h2 = silu(a2);
    const Tensor a3 = conv_fwd(h2, params_.value("enc.c3.w"), params_.value("enc.c3.b"), 2, 1);
    const Tensor h3 = silu(a3);
    Tensor flat({static_cast<int>(h3.size())});
    flat.data = h3.data;
    Tensor emb = linear_fwd(params_.value("enc.fc.w"), params_.value("enc.fc.b"), flat);
    if (tape) {
        auto& e = tape->enc[slot];
        e.x = x; e.a1 = a1; e.h1 = h1; e.a2 = a2; e.h2 = h2; e.a3 = a3; e.h3 = h3;
        e.flat = flat; e.emb = emb;
    }
    return emb;
}

Tensor HomographyScoreNet::encode(const ImageBuffer& img) const {
    return encode_impl(image_to_tensor(img), nullptr, 0);
}

Tensor HomographyScoreNet::trunk_impl(const Tensor& cat, Tape* tape) const {
    const Tensor a1 = linear_fwd(params_.value("trunk.l1.w"), params_.value("trunk.l1.b"), cat);
    const Tensor h1 = silu(a1);
    const Tensor a2 = linear_fwd(params_.value("trunk.l2.w"), params_.value("trunk.l2.b"), h1);
    const Tensor h2 = silu(a2);
    Tensor out = linear_fwd(params_.value("head.w"), params_.value("head.b"), h2);
    if (tape) {
        tape->cat = cat; tape->a1 = a1; tape->h1 = h1; tape->a2 = a2; tape->h2 = h2;
    }
    return out;
}

Tensor HomographyScoreNet::forward_cached(const Tensor& enc_src, const Tensor& enc_dst,
                                          const Tensor& h_state, int t) const {
    if (h_state.size() != 9)
        throw ShapeMismatch("forward_h: state must have 9 entries");
    const Tensor temb = time_embedding(t, cfg_.time_dim);
    Tensor cat({2 * cfg_.embed_dim + 9 + cfg_.time_dim});
    std::size_t k = 0;
    for (double v : enc_src.data) cat[k++] = v;
    for (double v : enc_dst.data) cat[k++] = v;
    for (double v : h_state.data) cat[k++] = v;
    for (double v : temb.data) cat[k++] = v;
    return trunk_impl(cat, nullptr);
}

Tensor HomographyScoreNet::forward(const ImageBuffer& src, const ImageBuffer& dst,
                                   const Tensor& h_state, int t) const {
    return forward_cached(encode(src), encode(dst), h_state, t);
}

Tensor HomographyScoreNet::forward_train(const ImageBuffer& src, const ImageBuffer& dst,
                                         const Tensor& h_state, int t) {
    if (h_state.size() != 9)
        throw ShapeMismatch("forward_h: state must have 9 entries");
    auto tape = std::make_shared<Tape>();
    const Tensor es = encode_impl(image_to_tensor(src), tape.get(), 0);
    const Tensor ed = encode_impl(image_to_tensor(dst), tape.get(), 1);
    const Tensor temb = time_embedding(t, cfg_.time_dim);
    Tensor cat({2 * cfg_.embed_dim + 9 + cfg_.time_dim});
    std::size_t k = 0;
    for (double v : es.data) cat[k++] = v;
    for (double v : ed.data) cat[k++] = v;
    for (double v : h_state.data) cat[k++] = v;
    for (double v : temb.data) cat[k++] = v;
    Tensor out = trunk_impl(cat, tape.get());
    tape_ = std::move(tape);
    return out;
}

void HomographyScoreNet::backward(const Tensor& dscore) {
    if (!tape_)
        throw NoRecordedForward("HomographyScoreNet::backward: no recorded forward");
    const Tape& tp = *tape_;

    auto& P = params_;
    auto acc_linear = [&](const char* wn, const char* bn, const Tensor& x,
                          const Tensor& dy, Tensor* dx) {
        Tensor dw(P.value(wn).dims), db(P.value(bn).dims);
        linear_bwd(P.value(wn), x, dy, dw, db, dx);
        axpy(P.grad(wn), dw);
        axpy(P.grad(bn), db);
    };

    // trunk
    Tensor dh2({cfg_.hidden});
    acc_linear("head.w", "head.b", tp.h2, dscore, &dh2);
    const Tensor da2 = silu_backward(tp.a2, dh2);
    Tensor dh1({cfg_.hidden});
    acc_linear("trunk.l2.w", "trunk.l2.b", tp.h1, da2, &dh1);
    const Tensor da1 = silu_backward(tp.a1, dh1);
    Tensor dcat({static_cast<int>(tp.cat.size())});
    acc_linear("trunk.l1.w", "trunk.l1.b", tp.cat, da1, &dcat);

    // split the concatenation gradient; the state/time slices stop here
    for (int slot = 0; slot < 2; ++slot) {
        const auto& e = tp.enc[slot];
        Tensor demb({cfg_.embed_dim});
        for (int i = 0; i < cfg_.embed_dim; ++i)
            demb[static_cast<std::size_t>(i)] =
                dcat[static_cast<std::size_t>(slot * cfg_.embed_dim + i)];

        Tensor dflat({static_cast<int>(e.flat.size())});
        acc_linear("enc.fc.w", "enc.fc.b", e.flat, demb, &dflat);
        Tensor dh3 = e.h3; // shape carrier
        dh3.data = dflat.data;
        const Tensor da3 = silu_backward(e.a3, dh3);

        Tensor dw3(P.value("enc.c3.w").dims), db3(P.value("enc.c3.b").dims), dh2e(e.h2.dims);
        kernels::conv2d_backward(e.h2, P.value("enc.c3.w"), 2, 1, da3, &dh2e, &dw3, &db3);
        axpy(P.grad("enc.c3.w"), dw3);
        axpy(P.grad("enc.c3.b"), db3);

        const Tensor da2e = silu_backward(e.a2, dh2e);
        Tensor dw2(P.value("enc.c2.w").dims), db2(P.value("enc.c2.b").dims), dh1e(e.h1.dims);
        kernels::conv2d_backward(e.h1, P.value("enc.c2.w"), 2, 1, da2e, &dh1e, &dw2, &db2);
        axpy(P.grad("enc.c2.w"), dw2);
        axpy(P.grad("enc.c2.b"), db2);

        const Tensor da1e = silu_backward(e.a1, dh1e);
        Tensor dw1(P.value("enc.c1.w").dims), db1(P.value("enc.c1.b").dims);
        kernels::conv2d_backward(e.x, P.value("enc.c1.w"), 2, 1, da1e, nullptr, &dw1, &db1);
        axpy(P.grad("enc.c1.w"), dw1);
        axpy(P.grad("enc.c1.b"), db1);
    }
    tape_.reset();
}

// ----------------------------------------------- displacement score net

struct DisplacementScoreNet::Tape {
    Tensor in4, temb;
    Tensor a0, h0, a1, h1, a2, h2, am, hm;
    Tensor up1, cat1, au1, hu1, up2, cat2, au2, hu2;
};

DisplacementScoreNet::DisplacementScoreNet(const DisplacementNetConfig& cfg) : cfg_(cfg) {
    if (cfg.field_size % 4 != 0)
        throw InvalidParameter("DisplacementScoreNet: field_size must be divisible by 4");
    if (cfg.image_size % cfg.field_size != 0)
        throw InvalidParameter("DisplacementScoreNet: image_size must be a multiple of field_size");
    params_.add("c0.w", "conv_w", {cfg.c0, 4, 3, 3});
    params_.add("c0.b", "conv_b", {cfg.c0});
    params_.add("tproj.w", "fc_w", {cfg.c0, cfg.time_dim});
    params_.add("tproj.b", "fc_b", {cfg.c0});
    params_.add("d1.w", "conv_w", {cfg.c1, cfg.c0, 3, 3});
    params_.add("d1.b", "conv_b", {cfg.c1});
    params_.add("d2.w", "conv_w", {cfg.c2, cfg.c1, 3, 3});
    params_.add("d2.b", "conv_b", {cfg.c2});
    params_.add("mid.w", "conv_w", {cfg.c2, cfg.c2, 3, 3});
    params_.add("mid.b", "conv_b", {cfg.c2});
    params_.add("u1.w", "conv_w", {cfg.c1, cfg.c2 + cfg.c1, 3, 3});
    params_.add("u1.b", "conv_b", {cfg.c1});
    params_.add("u2.w", "conv_w", {cfg.c0, cfg.c1 + cfg.c0, 3, 3});
    params_.add("u2.b", "conv_b", {cfg.c0});
    params_.add("head.w", "conv_w", {2, cfg.c0, 3, 3});
    params_.add("head.b", "conv_b", {2});
}

void DisplacementScoreNet::init_params(Rng& rng) {
    for (auto& e : params_.entries()) {
        if (e.name.rfind("head.", 0) == 0) {
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
        } else if (e.kind == "conv_w") {
            init_tensor(e.value, rng, fan_in_scale(e.value, true));
        } else if (e.kind == "fc_w") {
            init_tensor(e.value, rng, fan_in_scale(e.value, false));
        } else {
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
        }
    }
}

void DisplacementScoreNet::init_random(Rng& rng) {
    for (auto& e : params_.entries()) {
        if (e.kind == "conv_w")
            init_tensor(e.value, rng, fan_in_scale(e.value, true));
        else if (e.kind == "fc_w")
            init_tensor(e.value, rng, fan_in_scale(e.value, false));
        else
            init_tensor(e.value, rng, 0.1);
    }
}

Tensor DisplacementScoreNet::prepare_condition(const ImageBuffer& warped_src,
                                               const ImageBuffer& dst) const {
    ImageBuffer sw = structure_map(warped_src);
    ImageBuffer sd = structure_map(dst);
    if (sw.width != cfg_.field_size || sw.height != cfg_.field_size)
        sw = downsample_box(sw, cfg_.field_size, cfg_.field_size);
    if (sd.width != cfg_.field_size || sd.height != cfg_.field_size)
        sd = downsample_box(sd, cfg_.field_size, cfg_.field_size);
    Tensor cond({2, cfg_.field_size, cfg_.field_size});
    std::copy(sw.data.begin(), sw.data.end(), cond.data.begin());
    std::copy(sd.data.begin(), sd.data.end(),
              cond.data.begin() + static_cast<std::ptrdiff_t>(sw.data.size()));
    return cond;
}

Tensor DisplacementScoreNet::forward_impl(const Tensor& cond, const Tensor& v_state,
                                          int t, Tape* tape) const {
    if (v_state.dims != std::vector<int>{2, cfg_.field_size, cfg_.field_size})
        throw ShapeMismatch("forward_v: state must be (2, field, field)");
    const Tensor in4 = concat_channels(cond, v_state);
    Tensor a0 = conv_fwd(in4, params_.value("c0.w"), params_.value("c0.b"), 1, 1);
    const Tensor temb = time_embedding(t, cfg_.time_dim);
    const Tensor tb = linear_fwd(params_.value("tproj.w"), params_.value("tproj.b"), temb);
    for (int c = 0; c < cfg_.c0; ++c)
        for (int y = 0; y < cfg_.field_size; ++y)
            for (int x = 0; x < cfg_.field_size; ++x)
                a0.at3(c, y, x) += tb[static_cast<std::size_t>(c)];
    const Tensor h0 = silu(a0);
    const Tensor a1 = conv_fwd(h0, params_.value("d1.w"), params_.value("d1.b"), 2, 1);
    const Tensor h1 = silu(a1);
    const Tensor a2 = conv_fwd(h1, params_.value("d2.w"), params_.value("d2.b"), 2, 1);
    const Tensor h2 = silu(a2);
    const Tensor am = conv_fwd(h2, params_.value("mid.w"), params_.value("mid.b"), 1, 1);
    const Tensor hm = silu(am);
    const Tensor up1 = upsample2x(hm);
    const Tensor cat1 = concat_channels(up1, h1);
    const Tensor au1 = conv_fwd(cat1, params_.value("u1.w"), params_.value("u1.b"), 1, 1);
    const Tensor hu1 = silu(au1);
    const Tensor up2 = upsample2x(hu1);
    const Tensor cat2 = concat_channels(up2, h0);
    const Tensor au2 = conv_fwd(cat2, params_.value("u2.w"), params_.value("u2.b"), 1, 1);
    const Tensor hu2 = silu(au2);
    Tensor out = conv_fwd(hu2, params_.value("head.w"), params_.value("head.b"), 1, 1);
    if (tape) {
        tape->in4 = in4; tape->temb = temb;
        tape->a0 = a0; tape->h0 = h0; tape->a1 = a1; tape->h1 = h1;
        tape->a2 = a2; tape->h2 = h2; tape->am = am; tape->hm = hm;
        tape->up1 = up1; tape->cat1 = cat1; tape->au1 = au1; tape->hu1 = hu1;
        tape->up2 = up2; tape->cat2 = cat2; tape->au2 = au2; tape->hu2 = hu2;
    }
    return out;
}

Tensor DisplacementScoreNet::forward_cond(const Tensor& cond, const Tensor& v_state, int t) const {
    return forward_impl(cond, v_state, t, nullptr);
}

Tensor DisplacementScoreNet::forward(const ImageBuffer& warped_src, const ImageBuffer& dst,
                                     const Tensor& v_state, int t) const {
    return forward_impl(prepare_condition(warped_src, dst), v_state, t, nullptr);
}

Tensor DisplacementScoreNet::forward_train(const ImageBuffer& warped_src, const ImageBuffer& dst,
                                           const Tensor& v_state, int t) {
    auto tape = std::make_shared<Tape>();
    Tensor out = forward_impl(prepare_condition(warped_src, dst), v_state, t, tape.get());
    tape_ = std::move(tape);
    return out;
}

void DisplacementScoreNet::backward(const Tensor& dscore) {
    if (!tape_)
        throw NoRecordedForward("DisplacementScoreNet::backward: no recorded forward");
    const Tape& tp = *tape_;
    auto& P = params_;

    auto acc_conv = [&](const char* wn, const char* bn, const Tensor& input,
                        int stride, const Tensor& dout, Tensor* din) {
        Tensor dw(P.value(wn).dims), db(P.value(bn).dims);
        kernels::conv2d_backward(input, P.value(wn), stride, 1, dout, din, &dw, &db);
        axpy(P.grad(wn), dw);
        axpy(P.grad(bn), db);
    };

    Tensor dhu2(tp.hu2.dims);
    acc_conv("head.w", "head.b", tp.hu2, 1, dscore, &dhu2);
    const Tensor dau2 = silu_backward(tp.au2, dhu2);
    Tensor dcat2(tp.cat2.dims);
    acc_conv("u2.w", "u2.b", tp.cat2, 1, dau2, &dcat2);
    Tensor dup2, dh0_skip;
    split_channels(dcat2, cfg_.c1, dup2, dh0_skip);

    Tensor dhu1 = upsample2x_backward(dup2);
    const Tensor dau1 = silu_backward(tp.au1, dhu1);
    Tensor dcat1(tp.cat1.dims);
    acc_conv("u1.w", "u1.b", tp.cat1, 1, dau1, &dcat1);
    Tensor dup1, dh1_skip;
    split_channels(dcat1, cfg_.c2, dup1, dh1_skip);

    Tensor dhm = upsample2x_backward(dup1);
    const Tensor dam = silu_backward(tp.am, dhm);
    Tensor dh2(tp.h2.dims);
    acc_conv("mid.w", "mid.b", tp.h2, 1, dam, &dh2);

    const Tensor da2 = silu_backward(tp.a2, dh2);
    Tensor dh1(tp.h1.dims);
    acc_conv("d2.w", "d2.b", tp.h1, 2, da2, &dh1);
    axpy(dh1, dh1_skip);

    const Tensor da1 = silu_backward(tp.a1, dh1);
    Tensor dh0(tp.h0.dims);
    acc_conv("d1.w", "d1.b", tp.h0, 2, da1, &dh0);
    axpy(dh0, dh0_skip);

    const Tensor da0 = silu_backward(tp.a0, dh0);
    // time-projection bias gradient: sum over spatial positions
    Tensor dtb({cfg_.c0});
    for (int c = 0; c < cfg_.c0; ++c) {
        double acc = 0.0;
        for (int y = 0; y < cfg_.field_size; ++y)
            for (int x = 0; x < cfg_.field_size; ++x)
                acc += da0.at3(c, y, x);
        dtb[static_cast<std::size_t>(c)] = acc;
    }
    Tensor dwt(P.value("tproj.w").dims), dbt(P.value("tproj.b").dims);
    linear_bwd(P.value("tproj.w"), tp.temb, dtb, dwt, dbt, nullptr);
    axpy(P.grad("tproj.w"), dwt);
    axpy(P.grad("tproj.b"), dbt);
    acc_conv("c0.w", "c0.b", tp.in4, 1, da0, nullptr);

    tape_.reset();
}

// ------------------------------------------------------------ checkpoint

namespace {

void quantize_entry(ParamStore::Entry& e) {
    quantize_f32(e.value);
    quantize_f32(e.m);
    quantize_f32(e.v);
}

void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
}

} // namespace

void save_checkpoint(const std::string& path, ModelBundle& bundle,
                     const std::string& config_hash) {
    // commit live state to the serialized f32 precision first
    for (auto& e : bundle.h_net.params().entries()) quantize_entry(e);
    for (auto& e : bundle.v_net.params().entries()) quantize_entry(e);

    json header;
    header["format"] = "diffalign-checkpoint-v1";
    header["config_hash"] = config_hash;
    header["train_step"] = bundle.train_step;
    const auto& hc = bundle.h_net.config();
    header["h_net"] = {{"img_size", hc.img_size}, {"embed_dim", hc.embed_dim},
                       {"hidden", hc.hidden}, {"time_dim", hc.time_dim},
                       {"enc_c1", hc.enc_c1}, {"enc_c2", hc.enc_c2}, {"enc_c3", hc.enc_c3}};
    const auto& vc = bundle.v_net.config();
    header["v_net"] = {{"field_size", vc.field_size}, {"image_size", vc.image_size},
                       {"time_dim", vc.time_dim}, {"c0", vc.c0}, {"c1", vc.c1}, {"c2", vc.c2}};
    header["h_mean"] = bundle.h_mean;
    header["h_std"] = bundle.h_std;
    header["beta_h"] = bundle.sched_h.beta;
    header["beta_v"] = bundle.sched_v.beta;
    header["adam_step_h"] = bundle.h_net.params().adam_step;
    header["adam_step_v"] = bundle.v_net.params().adam_step;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("save_checkpoint: cannot open " + path);
    const std::string hs = header.dump();
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    std::uint32_t n_blocks = 0;
    for (const auto& e : bundle.h_net.params().entries()) n_blocks += 3;
    for (const auto& e : bundle.v_net.params().entries()) n_blocks += 3;
    f.write(reinterpret_cast<const char*>(&n_blocks), 4);
    for (const auto& e : bundle.h_net.params().entries()) {
        write_named_tensor(f, "h." + e.name, e.value);
        write_named_tensor(f, "h." + e.name + ".m", e.m);
        write_named_tensor(f, "h." + e.name + ".v", e.v);
    }
    for (const auto& e : bundle.v_net.params().entries()) {
        write_named_tensor(f, "v." + e.name, e.value);
        write_named_tensor(f, "v." + e.name + ".m", e.m);
        write_named_tensor(f, "v." + e.name + ".v", e.v);
    }
    if (!f) throw IOError("save_checkpoint: write failed for " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingCheckpoint("load_checkpoint: cannot open " + path);
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f || hlen > (1u << 24)) throw IOError("load_checkpoint: bad header length");
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    json header = json::parse(hs);
    if (header.value("format", "") != "diffalign-checkpoint-v1")
        throw IOError("load_checkpoint: unknown format");

    HomographyNetConfig hc;
    hc.img_size = header["h_net"]["img_size"];
    hc.embed_dim = header["h_net"]["embed_dim"];
    hc.hidden = header["h_net"]["hidden"];
    hc.time_dim = header["h_net"]["time_dim"];
    hc.enc_c1 = header["h_net"]["enc_c1"];
    hc.enc_c2 = header["h_net"]["enc_c2"];
    hc.enc_c3 = header["h_net"]["enc_c3"];
    DisplacementNetConfig vc;
    vc.field_size = header["v_net"]["field_size"];
    vc.image_size = header["v_net"]["image_size"];
    vc.time_dim = header["v_net"]["time_dim"];
    vc.c0 = header["v_net"]["c0"];
    vc.c1 = header["v_net"]["c1"];
    vc.c2 = header["v_net"]["c2"];

    ModelBundle bundle(hc, vc);
    bundle.train_step = header["train_step"];
    for (int i = 0; i < 9; ++i) {
        bundle.h_mean[static_cast<std::size_t>(i)] = header["h_mean"][static_cast<std::size_t>(i)];
        bundle.h_std[static_cast<std::size_t>(i)] = header["h_std"][static_cast<std::size_t>(i)];
    }
    const std::vector<double> beta_h = header["beta_h"].get<std::vector<double>>();
    const std::vector<double> beta_v = header["beta_v"].get<std::vector<double>>();
    auto rebuild = [](const std::vector<double>& beta) {
        NoiseSchedule s;
        s.T = static_cast<int>(beta.size());
        s.beta = beta;
        s.alpha_bar.resize(beta.size());
        double prod = 1.0;
        for (std::size_t i = 0; i < beta.size(); ++i) {
            prod *= (1.0 - beta[i]);
            s.alpha_bar[i] = prod;
        }
        return s;
    };
    bundle.sched_h = rebuild(beta_h);
    bundle.sched_v = rebuild(beta_v);
    bundle.h_net.params().adam_step = header["adam_step_h"];
    bundle.v_net.params().adam_step = header["adam_step_v"];

    std::uint32_t n_blocks = 0;
    f.read(reinterpret_cast<char*>(&n_blocks), 4);
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        std::uint32_t nlen = 0;
        f.read(reinterpret_cast<char*>(&nlen), 4);
        if (!f || nlen > 256) throw IOError("load_checkpoint: bad block name");
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        Tensor t = read_tensor(f);
        ParamStore* store = nullptr;
        std::string local;
        if (name.rfind("h.", 0) == 0) {
            store = &bundle.h_net.params();
            local = name.substr(2);
        } else if (name.rfind("v.", 0) == 0) {
            store = &bundle.v_net.params();
            local = name.substr(2);
        } else {
            throw IOError("load_checkpoint: unexpected block " + name);
        }
        Tensor* dst = nullptr;
        if (local.size() > 2 && local.compare(local.size() - 2, 2, ".m") == 0) {
            dst = &store->entry(local.substr(0, local.size() - 2)).m;
        } else if (local.size() > 2 && local.compare(local.size() - 2, 2, ".v") == 0) {
            dst = &store->entry(local.substr(0, local.size() - 2)).v;
        } else {
            dst = &store->entry(local).value;
        }
        if (dst->dims != t.dims)
            throw ShapeMismatch("load_checkpoint: dims mismatch for " + name);
        *dst = std::move(t);
    }
    return bundle;
}

// ------------------------------------------------------------- gradcheck

namespace {

double loss_probe(const Tensor& out, const Tensor& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * g[i];
    return acc;
}

struct ProbeInputs {
    ImageBuffer src, dst;
    Tensor h_state, v_state;
    int t_h = 0, t_v = 0;
};

ProbeInputs make_probe_inputs(Rng& rng, int img_size, int field_size) {
    ProbeInputs p;
    p.src = ImageBuffer(img_size, img_size, 1);
    p.dst = ImageBuffer(img_size, img_size, 1);
    for (double& v : p.src.data) v = rng.uniform();
    for (double& v : p.dst.data) v = rng.uniform();
    p.h_state = Tensor({9});
    for (double& v : p.h_state.data) v = rng.normal();
    p.v_state = Tensor({2, field_size, field_size});
    for (double& v : p.v_state.data) v = 0.5 * rng.normal();
    p.t_h = 1 + rng.uniform_int(100);
    p.t_v = 1 + rng.uniform_int(500);
    return p;
}

void check_store(ParamStore& store, const std::function<double()>& loss_fn,
                 Rng& rng, int samples_per_kind, GradCheckReport& report,
                 const std::optional<CorruptSpec>& corrupt) {
    // analytic gradients are already in store.grad; probe against central
    // finite differences at fp64
    std::vector<std::string> kinds = {"conv_w", "conv_b", "fc_w", "fc_b"};
    for (const auto& kind : kinds) {
        std::vector<std::pair<ParamStore::Entry*, std::size_t>> candidates;
        for (auto& e : store.entries())
            if (e.kind == kind)
                for (std::size_t i = 0; i < e.value.size(); ++i)
                    candidates.push_back({&e, i});
        if (candidates.empty()) continue;

        GradCheckEntry* slot = nullptr;
        for (auto& g : report.per_kind)
            if (g.kind == kind) slot = &g;
        if (!slot) {
            report.per_kind.push_back({kind, 0, 0.0});
            slot = &report.per_kind.back();
        }

        const int n = std::min<int>(samples_per_kind, static_cast<int>(candidates.size()));
        for (int s = 0; s < n; ++s) {
            const std::size_t pick = (candidates.size() <= static_cast<std::size_t>(n))
                ? static_cast<std::size_t>(s)
                : static_cast<std::size_t>(rng.uniform_int(static_cast<int>(candidates.size())));
            auto [entry, idx] = candidates[pick];
            double analytic = entry->grad[idx];
            if (corrupt && corrupt->param_name == entry->name && corrupt->index == idx)
                analytic += corrupt->delta;
            const double p0 = entry->value[idx];
            const double h = 1e-6 * std::max(1.0, std::abs(p0));
            entry->value[idx] = p0 + h;
            const double lp = loss_fn();
            entry->value[idx] = p0 - h;
            const double lm = loss_fn();
            entry->value[idx] = p0;
            const double fd = (lp - lm) / (2.0 * h);
            const double rel = std::abs(analytic - fd)
                / std::max({std::abs(analytic), std::abs(fd), 1e-6});
            slot->checked += 1;
            slot->max_rel_err = std::max(slot->max_rel_err, rel);
        }
    }
}

} // namespace

GradCheckReport grad_check(std::uint64_t seed, int samples_per_kind, double tol,
                           const std::optional<CorruptSpec>& corrupt) {
    GradCheckReport report;
    Rng rng(seed);

    // compact instances keep the finite-difference sweep cheap while
    // exercising every layer type at production shapes
    HomographyNetConfig hc;
    hc.img_size = 32;
    DisplacementNetConfig vc;
    vc.field_size = 16;
    vc.image_size = 32;

    {
        HomographyScoreNet net(hc);
        net.init_random(rng);
        ProbeInputs in = make_probe_inputs(rng, hc.img_size, vc.field_size);
        Tensor g({9});
        for (double& v : g.data) v = rng.normal();
        net.params().zero_grads();
        const Tensor out = net.forward_train(in.src, in.dst, in.h_state, in.t_h);
        net.backward(g);
        (void)out;
        auto loss_fn = [&]() {
            return loss_probe(net.forward(in.src, in.dst, in.h_state, in.t_h), g);
        };
        check_store(net.params(), loss_fn, rng, samples_per_kind, report, corrupt);
    }
    {
        DisplacementScoreNet net(vc);
        net.init_random(rng);
        ProbeInputs in = make_probe_inputs(rng, vc.image_size, vc.field_size);
        Tensor g({2, vc.field_size, vc.field_size});
        for (double& v : g.data) v = rng.normal();
        net.params().zero_grads();
        const Tensor out = net.forward_train(in.src, in.dst, in.v_state, in.t_v);
        net.backward(g);
        (void)out;
        auto loss_fn = [&]() {
            return loss_probe(net.forward(in.src, in.dst, in.v_state, in.t_v), g);
        };
        check_store(net.params(), loss_fn, rng, samples_per_kind, report, corrupt);
    }

    for (const auto& e : report.per_kind)
        report.worst = std::max(report.worst, e.max_rel_err);
    report.pass = report.worst < tol;
    return report;
}

} // namespace diffalign
