#pragma once

#include <cmath>
#include <cstdint>

namespace cola {

// splitmix64 with hand-rolled distributions so streams are identical across
// standard libraries and build modes.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) : state_(seed + 0x9E3779B97F4A7C15ull) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // Box-Muller; one draw per call, the pair's second half is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // standard Gumbel(0,1)
    double gumbel() {
        double u = 0.0;
        while (u <= 1e-300) u = uniform();
        return -std::log(-std::log(u));
    }

    // independent stream for a sub-task
    Rng fork(uint64_t salt) { return Rng(next_u64() ^ (salt * 0xD1342543DE82EF95ull)); }

   private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace cola
