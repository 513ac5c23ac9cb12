#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace swintempo {

/// Seeded generator with platform-stable distributions.
///
/// std::mt19937_64 is fully specified by the standard, but the std::*_distribution
/// adaptors are not, so sampling is done here from raw engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive), rejection sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller (no cached second variate).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Standard normal resampled until |z| <= 2.
    double truncated_normal();

    std::string state() const;
    void set_state(const std::string& text);

private:
    std::mt19937_64 engine_;
};

}  // namespace swintempo
