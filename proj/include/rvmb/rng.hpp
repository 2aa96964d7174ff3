// SPDX-License-Identifier: Apache-2.0
/**
 * Counter-based random numbers.
 *
 * Sampling throughout the toolkit is keyed by (seed, stream, counter) so that
 * any sample can be generated independently of every other sample: results do
 * not depend on evaluation order or on how work is split across workers.
 */
#pragma once

#include <cstdint>

#include "rvmb/core.hpp"

namespace rvmb {

/// SplitMix64 finalizer: a bijective mix with good avalanche behavior.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stateless generator: the n-th draw of stream `stream` under `seed`.
inline std::uint64_t rng_u64(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    std::uint64_t h = mix64(seed ^ 0x243f6a8885a308d3ULL);
    h = mix64(h ^ mix64(stream));
    return mix64(h ^ mix64(counter));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double rng_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return static_cast<double>(rng_u64(seed, stream, counter) >> 11) * 0x1.0p-53;
}

/// Convenience cursor over one stream; still stateless underneath.
class rng_stream {
public:
    rng_stream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double uniform() { return rng_uniform(seed_, stream_, counter_++); }

    /// Uniform in [a, b).
    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Uniform direction on the unit sphere.
    vec3 unit_vector() {
        double c = uniform(-1.0, 1.0);
        double phi = uniform(0.0, 2.0 * pi);
        double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        return {s * std::cos(phi), s * std::sin(phi), c};
    }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

} // namespace rvmb
