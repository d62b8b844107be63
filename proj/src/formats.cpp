// SPDX-License-Identifier: Apache-2.0
#include "lprec/formats.hpp"

#include <cctype>
#include <cmath>
#include <limits>

#include "lprec/errors.hpp"
#include "lprec/rng.hpp"

namespace lprec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// round |x| to the format's grid with the given integer-rounding rule applied
// to the scaled significand.  Exact: the scaled significand of any double fits
// binary64 after the power-of-two scaling below.
template <typename RoundSig>
double round_magnitude(double ax, const FloatFormat& fmt, RoundSig round_sig) {
  int e = std::ilogb(ax);
  if (e < fmt.min_exponent()) e = fmt.min_exponent();  // subnormal quantum
  int qexp = e - static_cast<int>(fmt.mantissa_bits);
  double sig = std::ldexp(ax, -qexp);  // exact scaling
  double rounded = round_sig(sig);
  return std::ldexp(rounded, qexp);
}

double rint_ties_even(double s) {
  double r = std::floor(s);
  double frac = s - r;  // exact: s < 2^(mantissa_bits+1) <= 2^11 here
  if (frac > 0.5 || (frac == 0.5 && std::fmod(r, 2.0) != 0.0)) r += 1.0;
  return r;
}

}  // namespace

FloatFormat FloatFormat::custom(uint32_t exp_bits, uint32_t man_bits) {
  if (exp_bits < 2 || exp_bits > 8)
    throw ConfigError("exponent_bits must be in [2, 8], got " +
                      std::to_string(exp_bits));
  if (man_bits > 10)
    throw ConfigError("mantissa_bits must be in [0, 10], got " +
                      std::to_string(man_bits));
  return FloatFormat{exp_bits, man_bits, false};
}

double FloatFormat::machine_epsilon() const {
  return std::ldexp(1.0, -static_cast<int>(mantissa_bits) - 1);
}

double FloatFormat::max_finite() const {
  if (exact_carrier) return std::numeric_limits<double>::max();
  // (2 - 2^-m) * 2^emax
  return std::ldexp(2.0 - std::ldexp(1.0, -static_cast<int>(mantissa_bits)),
                    max_exponent());
}

double FloatFormat::min_normal() const {
  if (exact_carrier) return std::numeric_limits<double>::min();
  return std::ldexp(1.0, min_exponent());
}

double FloatFormat::min_subnormal() const {
  if (exact_carrier) return std::numeric_limits<double>::denorm_min();
  return std::ldexp(1.0, min_exponent() - static_cast<int>(mantissa_bits));
}

std::string FloatFormat::name() const {
  if (exact_carrier) return "FP64";
  if (exponent_bits == 8 && mantissa_bits == 23) return "FP32";
  return "E" + std::to_string(exponent_bits) + "M" +
         std::to_string(mantissa_bits);
}

FloatFormat parse_format(std::string_view s) {
  std::string up;
  up.reserve(s.size());
  for (char c : s) up.push_back(static_cast<char>(std::toupper(c)));
  if (up == "BF16") return FloatFormat::bf16();
  if (up == "FP16") return FloatFormat::fp16();
  if (up.size() >= 4 && up[0] == 'E') {
    size_t mpos = up.find('M', 1);
    if (mpos != std::string::npos && mpos > 1 && mpos + 1 < up.size()) {
      bool digits = true;
      for (size_t i = 1; i < up.size(); ++i)
        if (i != mpos && !std::isdigit(static_cast<unsigned char>(up[i])))
          digits = false;
      if (digits) {
        unsigned long e = std::stoul(up.substr(1, mpos - 1));
        unsigned long m = std::stoul(up.substr(mpos + 1));
        if (e < 2 || e > 8)
          throw ConfigError("format " + std::string(s) +
                            ": exponent_bits outside supported range [2, 8]");
        if (m < 1)
          throw ConfigError("format " + std::string(s) +
                            ": mantissa_bits below supported minimum (1)");
        if (m > 10)
          throw ConfigError("format " + std::string(s) +
                            ": mantissa_bits above supported maximum (10)");
        return FloatFormat::custom(static_cast<uint32_t>(e),
                                   static_cast<uint32_t>(m));
      }
    }
  }
  throw ConfigError("unknown format \"" + std::string(s) +
                    "\" (expected E<e>M<m>, BF16, or FP16)");
}

double round_nearest(double x, const FloatFormat& fmt) {
  if (fmt.exact_carrier) return x;
  if (std::isnan(x)) return kNaN;
  if (std::isinf(x) || x == 0.0) return x;  // preserves signed zero
  double r = round_magnitude(std::fabs(x), fmt, rint_ties_even);
  if (r > fmt.max_finite()) r = kInf;
  return std::copysign(r, x);
}

bool is_representable(double x, const FloatFormat& fmt) {
  if (fmt.exact_carrier) return true;
  if (std::isnan(x) || std::isinf(x)) return true;
  return round_nearest(x, fmt) == x;
}

double next_up(double v, const FloatFormat& fmt) {
  if (fmt.exact_carrier)
    return std::nextafter(v, kInf);
  if (v == 0.0) return fmt.min_subnormal();
  if (v < 0.0) return -next_down(-v, fmt);
  // v > 0 and representable: v lies in [2^e, 2^(e+1)), spacing 2^(e-m);
  // adding one spacing lands exactly on the next value, including the jump
  // onto the next binade's first value.
  if (v >= fmt.max_finite()) return kInf;
  int e = std::ilogb(v);
  if (e < fmt.min_exponent()) e = fmt.min_exponent();
  return v + std::ldexp(1.0, e - static_cast<int>(fmt.mantissa_bits));
}

double next_down(double v, const FloatFormat& fmt) {
  if (fmt.exact_carrier)
    return std::nextafter(v, -kInf);
  if (v == 0.0) return -fmt.min_subnormal();
  if (v < 0.0) return -next_up(-v, fmt);
  int e = std::ilogb(v);
  if (e < fmt.min_exponent()) e = fmt.min_exponent();
  // stepping down from an exact power of two uses the finer spacing below it
  if (v == std::ldexp(1.0, e) && e > fmt.min_exponent()) e -= 1;
  return v - std::ldexp(1.0, e - static_cast<int>(fmt.mantissa_bits));
}

std::pair<double, double> neighbors(double x, const FloatFormat& fmt) {
  if (std::isnan(x)) throw NumericError("neighbors: NaN input");
  if (fmt.exact_carrier) return {x, x};
  if (std::fabs(x) > fmt.max_finite())
    throw NumericError("neighbors: |x| exceeds max finite of " + fmt.name());
  double r = round_nearest(x, fmt);
  if (r == x) return {x, x};
  if (r > x) return {next_down(r, fmt), r};
  return {r, next_up(r, fmt)};
}

double round_stochastic(double x, const FloatFormat& fmt, RngStream& rng) {
  if (std::isnan(x)) throw NumericError("stochastic rounding: NaN input");
  if (!fmt.exact_carrier && std::fabs(x) > fmt.max_finite())
    throw NumericError("stochastic rounding: |x| = " + std::to_string(x) +
                       " overflows " + fmt.name());
  double u = rng.uniform01();  // always exactly one draw per call
  auto [lo, hi] = neighbors(x, fmt);
  if (lo == hi) return x;
  double p_hi = (x - lo) / (hi - lo);
  return u < p_hi ? hi : lo;
}

double round_value(double x, const FloatFormat& fmt, RoundingMode mode,
                   RngStream* rng) {
  if (mode == RoundingMode::NearestTiesToEven) return round_nearest(x, fmt);
  if (rng == nullptr)
    throw ConfigError("stochastic rounding requires an RngStream");
  return round_stochastic(x, fmt, *rng);
}

double decode(uint32_t bits, const FloatFormat& fmt) {
  if (fmt.exact_carrier)
    throw ConfigError("decode: not a bit-level format");
  uint32_t w = fmt.total_bits();
  if (w < 32 && (bits >> w) != 0)
    throw ConfigError("decode: bit pattern wider than format");
  uint32_t man_mask = (1u << fmt.mantissa_bits) - 1u;
  uint32_t exp_mask = (1u << fmt.exponent_bits) - 1u;
  uint32_t man = bits & man_mask;
  uint32_t exp = (bits >> fmt.mantissa_bits) & exp_mask;
  bool neg = ((bits >> (w - 1)) & 1u) != 0;
  double mag;
  if (exp == exp_mask) {
    if (man != 0) return kNaN;  // canonical quiet NaN, payload dropped
    mag = kInf;
  } else if (exp == 0) {
    mag = std::ldexp(static_cast<double>(man),
                     fmt.min_exponent() - static_cast<int>(fmt.mantissa_bits));
  } else {
    mag = std::ldexp(
        static_cast<double>((1u << fmt.mantissa_bits) | man),
        static_cast<int>(exp) - fmt.bias() - static_cast<int>(fmt.mantissa_bits));
  }
  return neg ? -mag : mag;
}

uint32_t encode(double x, const FloatFormat& fmt) {
  if (fmt.exact_carrier)
    throw ConfigError("encode: not a bit-level format");
  uint32_t w = fmt.total_bits();
  uint32_t exp_mask = (1u << fmt.exponent_bits) - 1u;
  uint32_t sign_bit = 1u << (w - 1);
  if (std::isnan(x)) {
    if (fmt.mantissa_bits == 0)
      throw ConfigError("encode: format has no NaN encoding");
    return (exp_mask << fmt.mantissa_bits) | (1u << (fmt.mantissa_bits - 1));
  }
  uint32_t sign = std::signbit(x) ? sign_bit : 0u;
  if (std::isinf(x)) return sign | (exp_mask << fmt.mantissa_bits);
  if (x == 0.0) return sign;
  if (!is_representable(x, fmt))
    throw ConfigError("encode: value is not representable in " + fmt.name());
  double ax = std::fabs(x);
  int e = std::ilogb(ax);
  if (e < fmt.min_exponent()) {
    double man = std::ldexp(ax, static_cast<int>(fmt.mantissa_bits) -
                                    fmt.min_exponent());
    return sign | static_cast<uint32_t>(man);
  }
  double frac = std::ldexp(ax, -e);  // in [1, 2)
  auto man = static_cast<uint32_t>(
      std::ldexp(frac - 1.0, static_cast<int>(fmt.mantissa_bits)));
  auto exp = static_cast<uint32_t>(e + fmt.bias());
  return sign | (exp << fmt.mantissa_bits) | man;
}

}  // namespace lprec
