#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace rmab {

// All randomness in the toolkit derives from one user seed. Sub-streams are
// keyed by (seed, stream tag, index) through splitmix64 so that results do
// not depend on scheduling order.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                    std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(splitmix64(seed) ^ tag) + index);
}

namespace stream {
inline constexpr std::uint64_t kTransitions = 0x7472616e73ULL;
inline constexpr std::uint64_t kFeatures = 0x6665617475ULL;
inline constexpr std::uint64_t kTrajectories = 0x7472616aULL;
inline constexpr std::uint64_t kSplits = 0x73706c6974ULL;
inline constexpr std::uint64_t kModelInit = 0x696e6974ULL;
inline constexpr std::uint64_t kShuffle = 0x73687566ULL;
inline constexpr std::uint64_t kSimulation = 0x73696dULL;
inline constexpr std::uint64_t kSimDfl = 0x73646666ULL;
} // namespace stream

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on uniform01 (platform independent).
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0)
        u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Samples an index from a discrete distribution by inverse CDF.
inline int sample_index(std::span<const double> probs, double u) {
    double acc = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int k = 0; k < n; ++k) {
        acc += probs[k];
        if (u < acc)
            return k;
    }
    // rounding: fall back to the last index with positive mass
    for (int k = n - 1; k >= 0; --k)
        if (probs[k] > 0.0)
            return k;
    return n - 1;
}

} // namespace rmab
