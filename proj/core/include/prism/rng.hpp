#pragma once

#include <cstdint>
#include <random>

namespace prism {

// All randomness in the library goes through these helpers instead of the
// std distributions, whose output is implementation-defined. The same seed
// must produce the same tensor / factors on every platform.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [-1, 1].
inline double uniform_pm1(std::mt19937_64& rng) {
    return 2.0 * uniform_unit(rng) - 1.0;
}

/// Uniform integer in [0, n). Rejection-sampled, bias-free.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

/// Stateless 64-bit mix, used for seeded per-event decisions
/// (e.g. conflict injection) that must not depend on thread timing.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace prism
