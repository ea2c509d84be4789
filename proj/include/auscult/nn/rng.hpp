#pragma once

// Seeded random streams. The generator is std::mt19937_64, whose output
// sequence is fully specified by the standard, so identical seeds give
// bit-identical draws on every platform. Uniform floats are derived from
// the raw 64-bit output by explicit shifts (no std::uniform_* distributions,
// which are implementation-defined). Gaussian draws use Box-Muller and
// inherit the platform's libm for log/cos; they are deterministic per
// platform.

#include <cmath>
#include <cstdint>
#include <random>

namespace auscult::nn {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent child stream; child(i) is a pure function of (seed, i).
    RandomStream child(std::uint64_t stream_id) const {
        return RandomStream(splitmix64(seed_ ^ splitmix64(stream_id + 1)));
    }

    std::uint64_t next_u64() { return eng_(); }

    // [0,1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // [0,1) with 24-bit resolution, exactly representable in f32.
    float uniform_f() {
        return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive range. Modulo mapping; the bias is ~2^-64 and determinism
    // matters more here than exact uniformity.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float gaussian_f(float mean = 0.0f, float stddev = 1.0f) {
        return mean + stddev * static_cast<float>(gaussian());
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace auscult::nn
