#include "diffalign/dataset.hpp"

#include "diffalign/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace diffalign {

namespace fs = std::filesystem;
using nlohmann::json;

std::string pair_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%05d", index);
    return buf;
}

void save_pair(const std::string& dir, const std::string& id, const PairSample& p,
               const std::string& config_hash) {
    save_pnm(dir + "/" + id + "_src.pgm", p.src);
    save_pnm(dir + "/" + id + "_dst.pgm", p.dst);
    json side;
    side["id"] = id;
    side["h_gt"] = p.h_gt.h;
    side["seed"] = p.seed;
    side["degrade"] = {{"kind", p.degrade.kind_name()}, {"param", p.degrade.param}};
    side["coarse_size"] = p.v_gt.width;
    side["config_hash"] = config_hash;
    if (p.v_gt.is_zero()) {
        side["v_gt"] = nullptr;
    } else {
        side["v_gt"] = id + "_vgt.admt";
        save_tensor(dir + "/" + id + "_vgt.admt", p.v_gt.to_tensor());
    }
    std::ofstream f(dir + "/" + id + "_gt.json");
    if (!f) throw IOError("save_pair: cannot open sidecar for " + id);
    f << side.dump(2) << "\n";
}

PairSample load_pair(const std::string& dir, const std::string& id) {
    PairSample p;
    p.src = load_pnm(dir + "/" + id + "_src.pgm");
    p.dst = load_pnm(dir + "/" + id + "_dst.pgm");
    std::ifstream f(dir + "/" + id + "_gt.json");
    if (!f) throw IOError("load_pair: missing sidecar for " + id);
    json side = json::parse(f);
    for (std::size_t i = 0; i < 9; ++i) p.h_gt.h[i] = side["h_gt"][i];
    p.seed = side["seed"];
    p.degrade = DegradeSpec::parse(side["degrade"]["kind"], side["degrade"]["param"]);
    const int coarse = side.value("coarse_size", 16);
    if (side["v_gt"].is_null()) {
        p.v_gt = DisplacementField(coarse, coarse);
    } else {
        p.v_gt = DisplacementField::from_tensor(
            load_tensor(dir + "/" + side["v_gt"].get<std::string>()));
    }
    return p;
}

std::vector<std::string> list_pair_ids(const std::string& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir))
        throw IOError("list_pair_ids: not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const std::string suffix = "_gt.json";
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<PairSample> load_dataset(const std::string& dir) {
    std::vector<PairSample> out;
    for (const auto& id : list_pair_ids(dir))
        out.push_back(load_pair(dir, id));
    if (out.empty())
        throw EmptyInput("load_dataset: no pairs in " + dir);
    return out;
}

void residual_stats(const std::vector<Homography>& hs,
                    std::array<double, 9>& mean, std::array<double, 9>& stddev) {
    const Homography id = Homography::identity();
    mean.fill(0.0);
    stddev.fill(0.0);
    const double n = static_cast<double>(hs.size());
    for (const auto& H : hs) {
        const Homography Hn = normalize(H);
        for (std::size_t i = 0; i < 9; ++i) mean[i] += (Hn.h[i] - id.h[i]) / n;
    }
    for (const auto& H : hs) {
        const Homography Hn = normalize(H);
        for (std::size_t i = 0; i < 9; ++i) {
            const double d = (Hn.h[i] - id.h[i]) - mean[i];
            stddev[i] += d * d / n;
        }
    }
    for (std::size_t i = 0; i < 9; ++i)
        stddev[i] = std::max(std::sqrt(stddev[i]), 1e-3);
}

} // namespace diffalign
