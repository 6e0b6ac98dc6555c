#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace vickam {

/// SplitMix64 finalizer. All randomness in the library is derived from this
/// mixing function applied to (seed, counter) pairs, so every draw is a pure
/// function of its inputs and independent of platform RNG implementations.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// The 64-bit word at position `counter` of the stream keyed by `seed`.
constexpr std::uint64_t counter_word(std::uint64_t seed, std::uint64_t counter) noexcept {
    return splitmix64(splitmix64(seed) ^ (counter * 0xD1B54A32D192ED03ULL));
}

/// Derives an independent sub-seed from a parent seed and a tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

/// FNV-1a, used to key streams by strings (label names, config text).
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// 24-bit uniform in [0,1). Exactly representable as float.
constexpr double word_to_unit24(std::uint64_t w) noexcept {
    return static_cast<double>(w >> 40) * 0x1.0p-24;
}

/// 53-bit uniform in [0,1).
constexpr double word_to_unit53(std::uint64_t w) noexcept {
    return static_cast<double>(w >> 11) * 0x1.0p-53;
}

/// Standard normal from two words via Box-Muller (cosine branch).
inline double words_to_normal(std::uint64_t w1, std::uint64_t w2) noexcept {
    const double u1 = (static_cast<double>(w1 >> 11) + 1.0) * 0x1.0p-53; // (0,1]
    const double u2 = word_to_unit53(w2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential view over a counter stream.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t start = 0) noexcept
        : seed_(seed), counter_(start) {}

    std::uint64_t next() noexcept { return counter_word(seed_, counter_++); }
    double uniform() noexcept { return word_to_unit53(next()); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept {
        const auto a = next();
        const auto b = next();
        return words_to_normal(a, b);
    }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

} // namespace vickam
