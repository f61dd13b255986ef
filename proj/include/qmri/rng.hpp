#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace qmri {

namespace detail {
// splitmix64, used for seed mixing only.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}
}  // namespace detail

// Combine a seed with a purpose tag into a new seed. Sub-seeding is how
// parallel or per-item work gets its own stream without sharing state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(tag ^ 0xA5A5A5A5DEADBEEFull));
}

// Deterministic pseudo-random stream. All draws are derived from the raw
// mt19937_64 output sequence (which the standard pins down exactly), never
// from std::*_distribution, so identical seeds give bit-identical results
// on every platform.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed)
        : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection-free modulo bias is negligible for the n used here,
        // but stay exact anyway.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Standard normal via Box-Muller; the second value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log stays finite.
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Derive an independent stream for a tagged sub-task.
    RandomStream split(std::uint64_t tag) const {
        return RandomStream(mix_seed(seed_, tag));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline RandomStream seeded_rng(std::uint64_t seed) { return RandomStream(seed); }

}  // namespace qmri
