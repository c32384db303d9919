#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace cp4vlm {

/// PCG32 (PCG-XSH-RR, 64-bit state, 32-bit output) as published by O'Neill,
/// including the reference seeding routine `pcg32_srandom_r(seed, stream)`.
///
/// Every random decision in the library goes through this generator and the
/// derived helpers below, never through `<random>` distributions, whose
/// algorithms are implementation-defined. Splits and synthetic datasets are
/// therefore reproducible from (seed, stream) in any language:
///
///   - `bounded(n)`: rejection sampling with threshold `(2^32 - n) % n`
///     (the reference `pcg32_boundedrand_r`), result `r % n`.
///   - `uniform()`: `((a >> 5) * 2^26 + (b >> 6)) / 2^53` from two draws a, b.
///   - `normal()`: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
///   - `shuffle()`: Fisher-Yates from the back, `j = bounded(i + 1)`.
class Pcg32 {
public:
    using result_type = std::uint32_t;

    explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bULL, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return 0xffffffffu; }
    result_type operator()() { return next_u32(); }

    std::uint32_t next_u32() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // Uniform integer in [0, bound).
    std::uint32_t bounded(std::uint32_t bound) {
        const std::uint32_t threshold = (0u - bound) % bound;
        for (;;) {
            const std::uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        const std::uint64_t a = next_u32() >> 5;
        const std::uint64_t b = next_u32() >> 6;
        return static_cast<double>(a * 67108864ULL + b) * 0x1.0p-53;
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = bounded(static_cast<std::uint32_t>(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

} // namespace cp4vlm
