#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace das {

// Deterministic RNG. mt19937_64 has a fully specified stream, and all
// distributions below are implemented by hand so that sequences are
// reproducible across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(double(hi - lo + 1) * uniform());
    }

    // Box-Muller without caching the spare value.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Standard Laplace (location 0, scale 1) via inverse CDF.
    double laplace() {
        double u = uniform() - 0.5;
        double a = 1.0 - 2.0 * std::abs(u);
        if (a <= 0.0) a = 0x1.0p-53;
        return (u < 0 ? 1.0 : -1.0) * std::log(a);
    }

    // Independent stream derived from (seed, tags) by splitmix64 chaining.
    static Rng with_tags(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                         std::uint64_t c = 0) {
        std::uint64_t x = splitmix(seed + 0x9e3779b97f4a7c15ULL * (a + 1));
        x = splitmix(x + 0x9e3779b97f4a7c15ULL * (b + 1));
        x = splitmix(x + 0x9e3779b97f4a7c15ULL * (c + 1));
        return Rng(x);
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace das
