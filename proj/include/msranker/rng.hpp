#pragma once

// Seeded randomness with pinned draw semantics. std::uniform_*_distribution and
// std::shuffle are implementation-defined, so every sampling primitive the
// library relies on for reproducibility is spelled out here.

#include <cstdint>
#include <random>
#include <vector>

namespace msranker {

using Rng = std::mt19937_64;

// splitmix64; used to derive independent sub-streams from one run seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline Rng make_rng(uint64_t seed, uint64_t stream) { return Rng(mix_seed(seed, stream)); }

// Uniform in [0, 1) with 53 random bits.
inline double rng_uniform(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double rng_uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * rng_uniform(rng);
}

// Unbiased integer in [0, n) via rejection.
inline uint64_t rng_below(Rng& rng, uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Fisher-Yates with pinned draw order.
template <typename T>
void rng_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct values from [0, n), order randomized.
inline std::vector<int> rng_sample_distinct(Rng& rng, int n, int k) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        size_t j = static_cast<size_t>(rng_below(rng, static_cast<uint64_t>(n - i))) + i;
        std::swap(pool[static_cast<size_t>(i)], pool[j]);
        out.push_back(pool[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace msranker
