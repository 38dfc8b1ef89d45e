#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace evonas {

// Seedable random source with serializable state. All randomness in the
// engine flows through this wrapper so checkpoints can capture and restore
// generator state exactly, and so distributions are fixed functions of the
// underlying bit stream (std:: distributions keep internal state and are
// implementation-defined, which breaks resume-equality).
class Rng {
public:
    Rng() : engine_(0xE0A51DE5ull) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be >= 1.
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_index(
                        static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; stateless (second variate discarded).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Derive an independent stream for a tagged purpose. splitmix64 mixing
    // keeps derived seeds uncorrelated even for adjacent tags.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
        return derive(derive(seed, a), b);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace evonas
