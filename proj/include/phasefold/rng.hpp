#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

/// Counter-based random numbers.
///
/// Every draw is a pure function of (seed, tag, index[, extra]), so results do
/// not depend on evaluation order or on how work is partitioned across workers.
namespace phasefold::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a, used to turn purpose names into stream tags at compile time.
constexpr std::uint64_t tag(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t hash(std::uint64_t seed, std::uint64_t tag, std::uint64_t index,
                             std::uint64_t extra = 0) noexcept {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ extra);
    return splitmix64(h ^ index);
}

/// Uniform in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

constexpr double uniform(std::uint64_t seed, std::uint64_t tag, std::uint64_t index,
                         std::uint64_t extra = 0) noexcept {
    return to_unit(hash(seed, tag, index, extra));
}

/// Derive a child seed, e.g. per experiment cell or repetition.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return hash(seed, tag("derive"), a, b);
}

/// Sequential view over a counter-based stream. Copyable; two copies replay the
/// same numbers.
class Stream {
public:
    constexpr Stream(std::uint64_t seed, std::uint64_t tag) noexcept : seed_(seed), tag_(tag) {}

    constexpr std::uint64_t next_u64() noexcept { return hash(seed_, tag_, counter_++); }
    constexpr double uniform() noexcept { return to_unit(next_u64()); }

    /// Uniform integer in [0, bound), bound > 0. Lemire's multiply-shift with
    /// rejection, so the result is unbiased.
    std::uint64_t below(std::uint64_t bound) noexcept {
        while (true) {
            const std::uint64_t x = next_u64();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= bound || low >= (-bound) % bound) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    /// Standard normal via Box-Muller; consumes two counters per call.
    double normal() noexcept {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t tag_;
    std::uint64_t counter_ = 0;
};

}  // namespace phasefold::rng
