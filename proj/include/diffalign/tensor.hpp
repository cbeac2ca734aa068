#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace diffalign {

/// Dense row-major tensor of doubles. Serialized form is the "ADMT"
/// format: magic, u32 rank, u32 dims, little-endian f32 payload.
struct Tensor {
    std::vector<int> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> d);

    static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    /// 3-D accessor for (C, H, W) layouts.
    double& at3(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * dims[1] + y) * dims[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * dims[1] + y) * dims[2] + x];
    }
};

std::size_t dims_product(const std::vector<int>& dims);

/// Quantize every element to the nearest f32 value (the precision the
/// ADMT payload carries).
void quantize_f32(Tensor& t);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Stream forms used by multi-tensor container files (checkpoints).
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

} // namespace diffalign
