#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace quadgfm::numerics {

// bfloat16 storage word. Conversions round to nearest even; arithmetic is
// never done on this type directly, values are widened to float first.
struct Bf16 {
    std::uint16_t bits = 0;

    Bf16() = default;
    explicit Bf16(float value) : bits(round_from(value)) {}

    explicit operator float() const {
        return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
    }

    static std::uint16_t round_from(float value) {
        const auto raw = std::bit_cast<std::uint32_t>(value);
        if (std::isnan(value)) {
            return static_cast<std::uint16_t>((raw >> 16) | 0x40u);
        }
        const std::uint32_t lsb = (raw >> 16) & 1u;
        return static_cast<std::uint16_t>((raw + 0x7fffu + lsb) >> 16);
    }
};

// Round a float through bf16 storage and back.
inline float round_bf16(float value) { return static_cast<float>(Bf16(value)); }

template <class T> struct AccumulatorOf { using type = T; };
template <> struct AccumulatorOf<Bf16> { using type = float; };

// Accumulator type for a storage type: bf16 and float accumulate in float,
// double in double.
template <class T> using accum_t = typename AccumulatorOf<T>::type;

template <class T> inline accum_t<T> widen(T value) { return static_cast<accum_t<T>>(value); }

}  // namespace quadgfm::numerics
