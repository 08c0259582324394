#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace grreal {

/// Counter-based splittable RNG.
///
/// A stream is (key, counter); the i-th output is a bit-mix of key and i, so
/// streams are stateless apart from the counter and two streams with different
/// keys are independent. Substreams are derived by hashing a label (and an
/// optional index) into the key. Every stochastic consumer in the project owns
/// a named substream, so adding a consumer never perturbs the draws of another.
/// All derived quantities (uniform, normal, shuffle) are computed from the raw
/// 64-bit stream with fixed arithmetic, giving bit-identical sequences on any
/// platform with IEEE doubles.
class Rng {
public:
    Rng() : key_(0x9E3779B97F4A7C15ULL) {}
    explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0xA0761D6478BD642FULL)) {}

    /// Derive an independent substream identified by a label.
    Rng split(std::string_view label) const {
        Rng child;
        child.key_ = combine(key_, fnv1a(label));
        return child;
    }

    /// Derive an independent substream identified by a label and an index
    /// (per-pass, per-member, per-cell streams).
    Rng split(std::string_view label, std::uint64_t index) const {
        Rng child;
        child.key_ = combine(combine(key_, fnv1a(label)), mix64(index + 0x6A09E667F3BCC909ULL));
        return child;
    }

    std::uint64_t next_u64() { return mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * std::numbers::pi * uniform());
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
        return mix64(a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2)));
    }
    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace grreal
