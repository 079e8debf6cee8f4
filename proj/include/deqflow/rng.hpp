#pragma once

#include <cmath>
#include <cstdint>

namespace deqflow {

// Counter-based generator built on the SplitMix64 finalizer. Output i of
// stream s under seed k is mix(key(k, s) + i * 0x9E3779B97F4A7C15), so any
// draw is a pure function of (seed, stream, counter). Integer outputs are
// bit-exact on any platform; Gaussian draws additionally go through libm
// (log/sqrt/cos), which is deterministic per platform.
//
// Streams partition the draws per generated object (features, noise, teacher
// weights, ...) so that e.g. changing the sample count of a dataset does not
// perturb the teacher matrices.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix(seed ^ mix(stream + kStreamSalt))), counter_(0) {}

    std::uint64_t next_u64() {
        return mix(key_ + (counter_++) * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform double in [0, 1), 53 random mantissa bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    /// Standard normal via Box-Muller; the paired draw is cached.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so log() is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = next_uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    static constexpr std::uint64_t kStreamSalt = 0x9E6C63A5ULL;
    // SplitMix64 finalizer (Steele, Lea, Flood 2014).
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stream ids used across the project. Fixed numbers are part of the
// reproducibility contract: renumbering changes generated bytes.
namespace rng_stream {
inline constexpr std::uint64_t features = 1;
inline constexpr std::uint64_t noise = 2;
inline constexpr std::uint64_t teacher_a = 3;
inline constexpr std::uint64_t teacher_b = 4;
inline constexpr std::uint64_t init_a = 5;
inline constexpr std::uint64_t init_b = 6;
inline constexpr std::uint64_t probes = 7;
inline constexpr std::uint64_t redraw_base = 100;
} // namespace rng_stream

} // namespace deqflow
