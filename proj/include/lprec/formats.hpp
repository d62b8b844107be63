// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace lprec {

class RngStream;

enum class RoundingMode { NearestTiesToEven, Stochastic };

// A binary interchange-style float format: 1 sign bit, `exponent_bits` biased
// exponent bits (all-ones reserved for inf/NaN), `mantissa_bits` stored
// significand bits, gradual underflow, signed zero.
//
// Values are always carried as IEEE binary64; every representable value of
// every supported format is exactly representable in binary64, so binary64
// doubles act as the reference carrier and oracle precision throughout.
struct FloatFormat {
  uint32_t exponent_bits = 8;
  uint32_t mantissa_bits = 7;
  bool exact_carrier = false;  // identity rounding (binary64 oracle paths)

  // validated constructor for user-selectable formats
  static FloatFormat custom(uint32_t exp_bits, uint32_t man_bits);

  static FloatFormat bf16() { return FloatFormat{8, 7, false}; }
  static FloatFormat fp16() { return FloatFormat{5, 10, false}; }
  static FloatFormat e8m5() { return FloatFormat{8, 5, false}; }
  static FloatFormat e8m3() { return FloatFormat{8, 3, false}; }
  static FloatFormat e8m1() { return FloatFormat{8, 1, false}; }
  // IEEE binary32; carrier for the full-precision baseline arms.  Rounding to
  // this format is bit-identical to direct float arithmetic.
  static FloatFormat fp32() { return FloatFormat{8, 23, false}; }
  // identity carrier: round() is a no-op and everything is representable
  static FloatFormat exact() { return FloatFormat{11, 52, true}; }

  uint32_t total_bits() const { return 1 + exponent_bits + mantissa_bits; }
  int bias() const { return (1 << (exponent_bits - 1)) - 1; }
  int min_exponent() const { return 1 - bias(); }  // smallest normal exponent
  int max_exponent() const { return bias(); }      // largest normal exponent

  // half the relative spacing at the top of a binade: 2^-(mantissa_bits+1).
  // Adjacent representables u, v always satisfy eps|u| <= |u-v| <= 2 eps|u|.
  double machine_epsilon() const;
  double max_finite() const;
  double min_normal() const;
  double min_subnormal() const;

  std::string name() const;
  bool operator==(const FloatFormat&) const = default;
};

// "E8M7" / "e5m10" / "BF16" / "FP16".  Throws ConfigError for anything else,
// including mantissa widths outside [1, 10] and exponent widths outside
// [2, 8].
FloatFormat parse_format(std::string_view s);

// bit-pattern <-> value, for formats of at most 32 total bits.
// decode canonicalizes every NaN payload to the same quiet NaN; encode of NaN
// produces the canonical pattern (positive, all-ones exponent, MSB mantissa).
double decode(uint32_t bits, const FloatFormat& fmt);
uint32_t encode(double x, const FloatFormat& fmt);  // x must be representable

bool is_representable(double x, const FloatFormat& fmt);

// round-to-nearest, ties to even.  Overflow rounds to +-inf (IEEE rule: the
// midpoint between max_finite and the next would-be value rounds away).
// NaN in, NaN out.
double round_nearest(double x, const FloatFormat& fmt);

// adjacent representables a_lo <= x <= a_hi (equal iff x is representable).
// Requires finite x with |x| <= max_finite; throws NumericError otherwise.
std::pair<double, double> neighbors(double x, const FloatFormat& fmt);

// stochastic rounding: P(a_hi) = (x - a_lo) / (a_hi - a_lo), computed exactly
// in binary64 from the true neighbors.  Consumes exactly one uniform draw per
// call, including when x is already representable.  E[result] = x.
// Overflow (|x| > max_finite) and NaN throw NumericError: stochastic rounding
// has no sensible saturation semantics.
double round_stochastic(double x, const FloatFormat& fmt, RngStream& rng);

// dispatch on mode; Stochastic requires rng != nullptr (ConfigError).
double round_value(double x, const FloatFormat& fmt, RoundingMode mode,
                   RngStream* rng);

// next representable value above / below a representable v (saturating into
// +-inf past max_finite).
double next_up(double v, const FloatFormat& fmt);
double next_down(double v, const FloatFormat& fmt);

}  // namespace lprec
