#pragma once

// Counter-based randomness. Every variate is a pure function of
// (seed, stream, index), so draws are reproducible regardless of evaluation
// order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace robust_ai {

/// Philox4x32-10 block function (Salmon et al., Random123).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter block(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

/// Independent purposes that draw randomness from the same seed.
enum class Stream : std::uint64_t {
    LabelDraw = 1,
    BurnIn = 2,
    Resample = 3,
    Generator = 4,
    Pilot = 5,
};

namespace detail {

constexpr Philox4x32::Counter counter_for(Stream stream, std::uint64_t index) noexcept {
    const auto s = static_cast<std::uint64_t>(stream);
    return {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
            static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
}

constexpr Philox4x32::Key key_for(std::uint64_t seed) noexcept {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

constexpr double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
}

} // namespace detail

/// Uniform variate in [0, 1) for unit `index` of `stream`.
constexpr double uniform01(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept {
    const auto out = Philox4x32::block(detail::counter_for(stream, index), detail::key_for(seed));
    return detail::to_unit(out[0], out[1]);
}

/// Standard normal variate via Box-Muller on one Philox block.
inline double standard_normal(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept {
    const auto out = Philox4x32::block(detail::counter_for(stream, index), detail::key_for(seed));
    const double u1 = 1.0 - detail::to_unit(out[0], out[1]); // (0, 1]
    const double u2 = detail::to_unit(out[2], out[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// SplitMix64 finalizer; used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) noexcept {
    return mix64(mix64(base) ^ (salt * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

/// Seed of trial `t` in a simulation with base seed `base`.
constexpr std::uint64_t trial_seed(std::uint64_t base, std::uint64_t t) noexcept {
    return derive_seed(base, t);
}

} // namespace robust_ai
