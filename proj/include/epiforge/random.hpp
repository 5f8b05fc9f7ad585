#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace epiforge {

/// Stable 64-bit FNV-1a hash; used for seed labels and never for security.
std::uint64_t fnv1a(std::string_view text);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a stable label.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// Portable random source. The std:: distributions are implementation-defined,
/// so every variate here is built directly on the mt19937_64 bit stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform on the open interval (0, 1).
    double uniform_open() {
        double u = 0.0;
        while (u == 0.0) u = uniform();
        return u;
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t poisson(double mean);

private:
    std::mt19937_64 engine_;
};

}  // namespace epiforge
