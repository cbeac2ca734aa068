#include "diffalign/tensor.hpp"

#include "diffalign/errors.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace diffalign {

std::size_t dims_product(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

Tensor::Tensor(std::vector<int> d) : dims(std::move(d)) {
    data.assign(dims_product(dims), 0.0);
}

void quantize_f32(Tensor& t) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("ADMT", 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.dims.size());
    os.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : t.dims) {
        const std::uint32_t u = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&u), 4);
    }
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!os) throw IOError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ADMT", 4) != 0)
        throw IOError("read_tensor: bad magic");
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 4);
    if (!is || rank > 8) throw IOError("read_tensor: bad rank");
    std::vector<int> dims(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t u = 0;
        is.read(reinterpret_cast<char*>(&u), 4);
        dims[i] = static_cast<int>(u);
    }
    Tensor t(dims);
    for (double& v : t.data) {
        float f = 0.f;
        is.read(reinterpret_cast<char*>(&f), 4);
        v = static_cast<double>(f);
    }
    if (!is) throw IOError("read_tensor: truncated payload");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("save_tensor: cannot open " + path);
    write_tensor(f, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("load_tensor: cannot open " + path);
    return read_tensor(f);
}

} // namespace diffalign
