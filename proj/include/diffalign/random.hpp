#pragma once

#include <cstdint>

namespace diffalign {

/// Deterministic counter-free RNG (splitmix64 core, Box-Muller normals).
/// Self-contained so streams are bit-stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be > 0.
    int uniform_int(int n);

    /// Standard normal via Box-Muller (cosine branch only, so every
    /// draw consumes exactly two raw words).
    double normal();

    /// Derive an independent stream seed from (base, salt).
    static std::uint64_t derive(std::uint64_t base, std::uint64_t salt);

private:
    std::uint64_t state_;
};

} // namespace diffalign
