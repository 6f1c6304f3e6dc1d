#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace gtd::num {

/// 64-bit FNV-1a. Used to derive named sub-seeds: seed ^ fnv1a64(name).
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) { return seed ^ fnv1a64(name); }

/// Seeded generator: the engine is std::mt19937_64, whose output sequence is
/// fixed by the C++ standard. The conversions to doubles, indices and normals
/// are implemented here (std distributions differ between standard libraries).
///
///  uniform()        (u64 >> 11) * 2^-53, in [0, 1)
///  index(n)         rejection sampling on u64 % n, unbiased
///  normal()         Box-Muller on two uniforms, no caching
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t index(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    std::int64_t integer(std::int64_t lo, std::int64_t hi_inclusive) {
        return lo + static_cast<std::int64_t>(index(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace gtd::num
