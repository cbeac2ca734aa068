#include "diffalign/config.hpp"

#include "diffalign/errors.hpp"

#include <json.hpp>

#include <cstdio>

#include <filesystem>
#include <fstream>

namespace diffalign {

using nlohmann::json;

namespace {

json to_json(const RunConfig& c) {
    json j;
    j["image_size"] = c.image_size;
    j["coarse_size"] = c.coarse_size;
    j["t_h"] = c.t_h;
    j["t_v"] = c.t_v;
    j["beta_min"] = c.beta_min;
    j["beta_max"] = c.beta_max;
    j["interleave"] = c.interleave;
    j["g_l"] = c.g_l;
    j["fd_step"] = c.fd_step;
    j["n_iter"] = c.n_iter;
    j["max_restarts"] = c.max_restarts;
    j["oracle"] = c.oracle;
    j["lambda_x"] = c.lambda_x;
    j["lambda_r"] = c.lambda_r;
    j["delta_s_dynamic"] = c.delta_s_dynamic;
    j["delta_x_dynamic"] = c.delta_x_dynamic;
    j["delta_r_dynamic"] = c.delta_r_dynamic;
    j["lr"] = c.lr;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["weight_decay"] = c.weight_decay;
    j["train_steps"] = c.train_steps;
    j["batch_size"] = c.batch_size;
    j["checkpoint_interval"] = c.checkpoint_interval;
    j["warp_with_clean_h"] = c.warp_with_clean_h;
    j["embed_dim"] = c.embed_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["time_dim"] = c.time_dim;
    j["n_pairs"] = c.n_pairs;
    j["scale_min"] = c.scale_min;
    j["scale_max"] = c.scale_max;
    j["max_translation"] = c.max_translation;
    j["max_rotation_deg"] = c.max_rotation_deg;
    j["perspective_amp"] = c.perspective_amp;
    j["coarse_rotation"] = c.coarse_rotation;
    j["deform_amplitude"] = c.deform_amplitude;
    j["degrade_kind"] = c.degrade_kind;
    j["degrade_param"] = c.degrade_param;
    j["sweep_t_h"] = c.sweep_t_h;
    j["sweep_t_v"] = c.sweep_t_v;
    j["degrade_noise_sigmas"] = c.degrade_noise_sigmas;
    j["degrade_blur_sigmas"] = c.degrade_blur_sigmas;
    j["degrade_illum_alphas"] = c.degrade_illum_alphas;
    j["ablate_train_steps"] = c.ablate_train_steps;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["dataset_dir"] = c.dataset_dir;
    j["eval_dataset_dir"] = c.eval_dataset_dir;
    j["output_dir"] = c.output_dir;
    j["checkpoint"] = c.checkpoint;
    return j;
}

void from_json(const json& j, RunConfig& c) {
    const json defaults = to_json(RunConfig{});
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key))
            throw InvalidConfig("unknown config key: " + key);
        (void)value;
    }
    json merged = defaults;
    merged.update(j);
    c.image_size = merged["image_size"];
    c.coarse_size = merged["coarse_size"];
    c.t_h = merged["t_h"];
    c.t_v = merged["t_v"];
    c.beta_min = merged["beta_min"];
    c.beta_max = merged["beta_max"];
    c.interleave = merged["interleave"];
    c.g_l = merged["g_l"];
    c.fd_step = merged["fd_step"];
    c.n_iter = merged["n_iter"];
    c.max_restarts = merged["max_restarts"];
    c.oracle = merged["oracle"];
    c.lambda_x = merged["lambda_x"];
    c.lambda_r = merged["lambda_r"];
    c.delta_s_dynamic = merged["delta_s_dynamic"];
    c.delta_x_dynamic = merged["delta_x_dynamic"];
    c.delta_r_dynamic = merged["delta_r_dynamic"];
    c.lr = merged["lr"];
    c.adam_beta1 = merged["adam_beta1"];
    c.adam_beta2 = merged["adam_beta2"];
    c.adam_eps = merged["adam_eps"];
    c.weight_decay = merged["weight_decay"];
    c.train_steps = merged["train_steps"];
    c.batch_size = merged["batch_size"];
    c.checkpoint_interval = merged["checkpoint_interval"];
    c.warp_with_clean_h = merged["warp_with_clean_h"];
    c.embed_dim = merged["embed_dim"];
    c.hidden_dim = merged["hidden_dim"];
    c.time_dim = merged["time_dim"];
    c.n_pairs = merged["n_pairs"];
    c.scale_min = merged["scale_min"];
    c.scale_max = merged["scale_max"];
    c.max_translation = merged["max_translation"];
    c.max_rotation_deg = merged["max_rotation_deg"];
    c.perspective_amp = merged["perspective_amp"];
    c.coarse_rotation = merged["coarse_rotation"];
    c.deform_amplitude = merged["deform_amplitude"];
    c.degrade_kind = merged["degrade_kind"];
    c.degrade_param = merged["degrade_param"];
    c.sweep_t_h = merged["sweep_t_h"].get<std::vector<int>>();
    c.sweep_t_v = merged["sweep_t_v"].get<std::vector<int>>();
    c.degrade_noise_sigmas = merged["degrade_noise_sigmas"].get<std::vector<double>>();
    c.degrade_blur_sigmas = merged["degrade_blur_sigmas"].get<std::vector<double>>();
    c.degrade_illum_alphas = merged["degrade_illum_alphas"].get<std::vector<double>>();
    c.ablate_train_steps = merged["ablate_train_steps"];
    c.seed = merged["seed"];
    c.jobs = merged["jobs"];
    c.dataset_dir = merged["dataset_dir"];
    c.eval_dataset_dir = merged["eval_dataset_dir"];
    c.output_dir = merged["output_dir"];
    c.checkpoint = merged["checkpoint"];
}

} // namespace

void RunConfig::validate() const {
    if (image_size < 16 || image_size % 8 != 0)
        throw InvalidConfig("image_size must be >= 16 and divisible by 8");
    if (coarse_size < 4 || coarse_size % 4 != 0 || image_size % coarse_size != 0)
        throw InvalidConfig("coarse_size must be divisible by 4 and divide image_size");
    if (t_h < 1 || t_v < 1)
        throw InvalidConfig("t_h and t_v must be >= 1");
    if (beta_min <= 0.0 || beta_max >= 1.0 || beta_min > beta_max)
        throw InvalidConfig("need 0 < beta_min <= beta_max < 1");
    if (interleave < 1)
        throw InvalidConfig("interleave must be >= 1");
    if (g_l < 0.0 || fd_step <= 0.0)
        throw InvalidConfig("g_l must be >= 0 and fd_step > 0");
    if (n_iter < 1)
        throw InvalidConfig("n_iter must be >= 1");
    if (batch_size < 1 || batch_size > 4)
        throw InvalidConfig("batch_size must be in [1,4]");
    if (scale_min <= 0.0 || scale_max < scale_min)
        throw InvalidConfig("invalid scale range");
    if (jobs < 1)
        throw InvalidConfig("jobs must be >= 1");
    if (degrade_kind != "none")
        (void)DegradeSpec::parse(degrade_kind, degrade_param);
}

TransformRange RunConfig::transform_range() const {
    TransformRange r;
    r.scale_min = scale_min;
    r.scale_max = scale_max;
    r.max_translation = max_translation;
    r.max_rotation_deg = max_rotation_deg;
    r.perspective_amp = perspective_amp;
    r.coarse_rotation = coarse_rotation;
    return r;
}

DegradeSpec RunConfig::degrade_spec() const {
    return DegradeSpec::parse(degrade_kind, degrade_param);
}

LossWeights RunConfig::loss_weights() const {
    LossWeights w;
    w.lambda_x = lambda_x;
    w.lambda_r = lambda_r;
    w.dynamic_s = delta_s_dynamic;
    w.dynamic_x = delta_x_dynamic;
    w.dynamic_r = delta_r_dynamic;
    return w;
}

AdamConfig RunConfig::adam_config() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = adam_beta1;
    a.beta2 = adam_beta2;
    a.eps = adam_eps;
    a.weight_decay = weight_decay;
    return a;
}

HomographyNetConfig RunConfig::h_net_config() const {
    HomographyNetConfig h;
    h.img_size = image_size;
    h.embed_dim = embed_dim;
    h.hidden = hidden_dim;
    h.time_dim = time_dim;
    return h;
}

DisplacementNetConfig RunConfig::v_net_config() const {
    DisplacementNetConfig v;
    v.field_size = coarse_size;
    v.image_size = image_size;
    v.time_dim = time_dim;
    return v;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.image_size = image_size;
    t.coarse_size = coarse_size;
    t.t_h = t_h;
    t.t_v = t_v;
    t.beta_min = beta_min;
    t.beta_max = beta_max;
    t.adam = adam_config();
    t.steps = train_steps;
    t.batch_size = batch_size;
    t.checkpoint_interval = checkpoint_interval;
    t.warp_with_clean_h = warp_with_clean_h;
    t.weights = loss_weights();
    t.seed = seed;
    t.out_dir = output_dir;
    t.h_cfg = h_net_config();
    t.v_cfg = v_net_config();
    return t;
}

SamplerConfig RunConfig::sampler_config() const {
    SamplerConfig s;
    s.t_h = t_h;
    s.t_v = t_v;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.interleave = interleave;
    s.coarse_size = coarse_size;
    s.max_restarts = max_restarts;
    s.guidance.g_l = g_l;
    s.guidance.fd_step = fd_step;
    return s;
}

RunConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidConfig(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    from_json(j, c);
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidConfig("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json(const RunConfig& cfg) {
    return to_json(cfg).dump(2);
}

std::string config_hash(const RunConfig& cfg) {
    const std::string s = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_effective_config(const std::string& dir, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/config.json");
    if (!f) throw IOError("cannot write effective config to " + dir);
    f << config_to_json(cfg) << "\n";
}

} // namespace diffalign
