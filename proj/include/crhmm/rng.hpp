#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace crhmm {

// splitmix64 step; used to whiten and combine seed material.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed and up to two
/// indices (e.g. subset and resample). Collision-free in practice and
/// reproducible in isolation: no draw-order coupling between streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s ^= stream * 0xd6e8feb86659fd93ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index * 0xa3b195354a39b70dULL;
    std::uint64_t c = splitmix64(s);
    return a ^ (b << 1) ^ (c >> 1);
}

/// Uniform double in [0, 1) from the top 53 bits of an engine draw.
/// Avoids std::uniform_real_distribution so the mapping is pinned down.
inline double uniform01(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection; n must be positive.
inline std::uint64_t uniform_below(std::mt19937_64& eng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do { x = eng(); } while (x >= limit);
    return x % n;
}

/// Index draw from an unnormalized weight array by CDF scan.
inline int categorical(std::mt19937_64& eng, const double* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w[i];
    double u = uniform01(eng) * total;
    double acc = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        acc += w[i];
        if (u < acc) return i;
    }
    return n - 1;
}

inline int categorical(std::mt19937_64& eng, const std::vector<double>& w) {
    return categorical(eng, w.data(), static_cast<int>(w.size()));
}

/// In-place Fisher-Yates shuffle driven by uniform_below, so the result
/// depends only on the engine state, not on library internals.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& eng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_below(eng, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace crhmm
