#pragma once

#include "diffalign/image.hpp"
#include "diffalign/random.hpp"

#include <filesystem>
#include <string>

namespace testutil {

inline diffalign::ImageBuffer random_image(int w, int h, diffalign::Rng& rng, int channels = 1) {
    diffalign::ImageBuffer img(w, h, channels);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

inline diffalign::Tensor random_tensor(std::vector<int> dims, diffalign::Rng& rng) {
    diffalign::Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.normal();
    return t;
}

/// Scratch directory under the build tree, wiped on construction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / ("diffalign_test_" + name);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& s) const { return (path / s).string(); }
};

} // namespace testutil
