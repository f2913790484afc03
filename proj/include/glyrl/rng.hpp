#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace glyrl {

// xoshiro256++ seeded through splitmix64. All distributions are hand-rolled so
// that streams are reproducible across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    uint64_t next() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // in [0, 1)
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Box-Muller, two fresh uniforms per draw (no cached second value).
    double normal() {
        const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mu, double sd) { return mu + sd * normal(); }

    double lognormal(double mu_log, double sd_log) { return std::exp(normal(mu_log, sd_log)); }

    // unbiased via rejection on the top slice
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

// Deterministic sub-stream derivation: chain splitmix over the path elements.
inline uint64_t derive_seed(uint64_t root, uint64_t a) {
    uint64_t x = root;
    Rng::splitmix64(x);
    x ^= a * 0x9e3779b97f4a7c15ull;
    return Rng::splitmix64(x);
}

inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(root, a), b);
}

inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b, uint64_t c) {
    return derive_seed(derive_seed(root, a, b), c);
}

}  // namespace glyrl
