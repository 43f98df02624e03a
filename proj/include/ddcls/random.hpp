#pragma once

// Portable draws on top of std::mt19937_64. The standard distributions are
// implementation-defined, so seeded results would differ between toolchains.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace ddcls {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, bound).
inline std::uint64_t bounded(Rng& rng, std::uint64_t bound)
{
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= limit)
            return x % bound;
    }
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0)
{
    const double u1 = 1.0 - uniform01(rng); // (0, 1]
    const double u2 = uniform01(rng);
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename Vec>
void shuffle(Vec& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[bounded(rng, i)]);
}

} // namespace ddcls
