#pragma once

#include <cstdint>
#include <random>

namespace endowave {

/// Seeded generator with explicit distributions, so streams are reproducible
/// across standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    /// Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller; consumes two uniforms per pair, one value cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).
    uint64_t index(uint64_t n) {
        // Multiply-shift; bias is negligible for n << 2^64.
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::mt19937_64 eng_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace endowave
