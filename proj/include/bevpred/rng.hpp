#pragma once

#include <cstdint>

namespace bevpred {

/// Seeded splitmix64 generator. Self-contained so streams are reproducible
/// across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be nonzero.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    /// Derive an independent child stream (e.g. one per named weight tensor).
    Rng fork() { return Rng(next_u64()); }

private:
    std::uint64_t state_;
};

} // namespace bevpred
