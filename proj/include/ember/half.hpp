#pragma once

#include <bit>
#include <cstdint>

namespace ember {

/// IEEE 754 binary16: 1 sign bit, 5 exponent bits, 10 mantissa bits.
struct Half {
  std::uint16_t bits = 0;

  constexpr bool is_nan() const { return (bits & 0x7C00u) == 0x7C00u && (bits & 0x03FFu) != 0; }
  constexpr bool is_inf() const { return (bits & 0x7FFFu) == 0x7C00u; }

  friend constexpr bool operator==(Half a, Half b) { return a.bits == b.bits; }
};

inline constexpr float kHalfMax = 65504.0f;

/// Round-to-nearest-even narrowing. Overflow goes to signed infinity,
/// subnormals are kept, every NaN becomes the quiet NaN 0x7E00 (sign kept).
constexpr Half to_half(float x) noexcept {
  const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
  const auto sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t mag = f & 0x7FFFFFFFu;

  if (mag >= 0x7F800000u) {
    return Half{static_cast<std::uint16_t>(sign | (mag > 0x7F800000u ? 0x7E00u : 0x7C00u))};
  }
  // 65520 is the midpoint between 65504 and 2^16; ties go to the even
  // neighbour, which is the (infinite) 2^16.
  if (mag >= 0x477FF000u) {
    return Half{static_cast<std::uint16_t>(sign | 0x7C00u)};
  }
  if (mag < 0x38800000u) {
    // Result is subnormal (or zero): count units of 2^-24.
    const std::uint32_t exp = mag >> 23;
    if (exp < 102) return Half{sign};  // below 2^-25, rounds to zero
    const std::uint32_t mant = (mag & 0x007FFFFFu) | 0x00800000u;
    const std::uint32_t shift = 126 - exp;
    std::uint32_t q = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (q & 1u))) ++q;
    return Half{static_cast<std::uint16_t>(sign | q)};
  }
  // Normal range: rebias the exponent and drop 13 mantissa bits. A carry out
  // of the mantissa correctly bumps the exponent.
  const std::uint32_t rebased = mag - 0x38000000u;
  std::uint32_t q = rebased >> 13;
  const std::uint32_t rem = rebased & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (q & 1u))) ++q;
  return Half{static_cast<std::uint16_t>(sign | q)};
}

/// Exact widening.
constexpr float from_half(Half h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h.bits & 0x8000u) << 16;
  const std::uint32_t exp = (h.bits >> 10) & 0x1Fu;
  std::uint32_t mant = h.bits & 0x03FFu;

  if (exp == 0x1Fu) return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  if (exp == 0) {
    if (mant == 0) return std::bit_cast<float>(sign);
    std::uint32_t e = 113;
    while ((mant & 0x0400u) == 0) {
      mant <<= 1;
      --e;
    }
    mant &= 0x03FFu;
    return std::bit_cast<float>(sign | (e << 23) | (mant << 13));
  }
  return std::bit_cast<float>(sign | ((exp + 112) << 23) | (mant << 13));
}

/// Nearest binary16 value, widened back to float.
constexpr float round_to_half(float x) noexcept { return from_half(to_half(x)); }

}  // namespace ember
