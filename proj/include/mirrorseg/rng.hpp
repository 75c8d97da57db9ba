#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mirrorseg {

// Draw helpers on top of mt19937_64 with explicit arithmetic, so streams do
// not depend on standard-library distribution internals.
namespace rng {

inline double uniform(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform(g);
}

// Inclusive integer range.
inline int64_t uniform_int(std::mt19937_64& g, int64_t lo, int64_t hi) {
    const auto span = static_cast<uint64_t>(hi - lo + 1);
    return lo + static_cast<int64_t>(g() % span);
}

// Box-Muller.
inline double normal(std::mt19937_64& g) {
    double u1 = uniform(g);
    while (u1 <= 0.0) u1 = uniform(g);
    const double u2 = uniform(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline bool bernoulli(std::mt19937_64& g, double p) { return uniform(g) < p; }

// Derive an independent stream for (seed, salt) pairs, splitmix64-style.
inline uint64_t derive_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace rng
} // namespace mirrorseg
