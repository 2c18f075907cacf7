#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace vidattn {

// Deterministic RNG. mt19937_64 has a standard-pinned bit stream; the
// mappings below are hand-rolled because std::*_distribution output is
// implementation-defined and golden tests freeze exact values.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53 mantissa bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    // Uniform index in [0, n). Modulo bias is irrelevant at the sizes used
    // here; determinism is what matters.
    std::int64_t uniform_index(std::int64_t n) {
        return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vidattn
