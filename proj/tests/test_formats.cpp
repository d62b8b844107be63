// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/formats.hpp"
#include "lprec/rng.hpp"

using namespace lprec;

namespace {
const FloatFormat kBf16 = FloatFormat::bf16();
const FloatFormat kFp16 = FloatFormat::fp16();

bool is_nan_pattern(uint32_t bits, const FloatFormat& f) {
  uint32_t man = bits & ((1u << f.mantissa_bits) - 1u);
  uint32_t exp = (bits >> f.mantissa_bits) & ((1u << f.exponent_bits) - 1u);
  return exp == (1u << f.exponent_bits) - 1u && man != 0;
}
}  // namespace

TEST_CASE("format constants") {
  CHECK(kBf16.machine_epsilon() == 0.00390625);  // 2^-8
  CHECK(kFp16.machine_epsilon() == 0x1p-11);
  CHECK(FloatFormat::e8m1().machine_epsilon() == 0.25);
  CHECK(FloatFormat::e8m5().machine_epsilon() == 0x1p-6);
  CHECK(FloatFormat::e8m3().machine_epsilon() == 0x1p-4);
  CHECK(kBf16.bias() == 127);
  CHECK(kFp16.bias() == 15);
  CHECK(kFp16.max_finite() == 65504.0);
  CHECK(kBf16.max_finite() == 0x1.FEp127);
  CHECK(kBf16.min_normal() == 0x1p-126);
  CHECK(kBf16.min_subnormal() == 0x1p-133);
  CHECK(kBf16.total_bits() == 16);
  CHECK(kBf16.name() == "E8M7");
  CHECK(FloatFormat::fp32().name() == "FP32");
  CHECK(FloatFormat::exact().name() == "FP64");
}

TEST_CASE("parse_format") {
  CHECK(parse_format("E8M7") == kBf16);
  CHECK(parse_format("bf16") == kBf16);
  CHECK(parse_format("FP16") == kFp16);
  CHECK(parse_format("e5m10") == kFp16);
  CHECK(parse_format("E8M1") == FloatFormat::e8m1());
  CHECK_THROWS_AS(parse_format("E8M0"), ConfigError);
  CHECK_THROWS_AS(parse_format("E8M11"), ConfigError);
  CHECK_THROWS_AS(parse_format("E1M3"), ConfigError);
  CHECK_THROWS_AS(parse_format("E9M2"), ConfigError);
  CHECK_THROWS_AS(parse_format("FP32"), ConfigError);
  CHECK_THROWS_AS(parse_format(""), ConfigError);
  CHECK_THROWS_AS(parse_format("EM"), ConfigError);
  CHECK_THROWS_AS(parse_format("E8M7x"), ConfigError);
}

TEST_CASE("decode anchor values") {
  CHECK(decode(0x3F80, kBf16) == 1.0);
  CHECK(decode(0x3DCD, kBf16) == 0.10009765625);
  CHECK(decode(0x0000, kBf16) == 0.0);
  CHECK(!std::signbit(decode(0x0000, kBf16)));
  CHECK(std::signbit(decode(0x8000, kBf16)));
  CHECK(decode(0x4380, kBf16) == 256.0);
  CHECK(decode(0x437F, kBf16) == 255.0);
  CHECK(std::isinf(decode(0x7F80, kBf16)));
  CHECK(std::isnan(decode(0x7FC1, kBf16)));
  CHECK(decode(0x0001, kBf16) == 0x1p-133);  // smallest subnormal
  CHECK(encode(1.0, kBf16) == 0x3F80);
  CHECK(encode(0.10009765625, kBf16) == 0x3DCD);
  CHECK(encode(-0.0, kBf16) == 0x8000);
}

TEST_CASE("round_nearest anchors") {
  CHECK(round_nearest(0.1, kBf16) == 0.10009765625);
  CHECK(round_nearest(1.0 + 0x1p-9, kBf16) == 1.0);
  // true midpoint between 1.0 and 1.0 + 2^-7: tie goes to the even mantissa
  CHECK(round_nearest(1.0 + 0x1p-8, kBf16) == 1.0);
  CHECK(round_nearest(1.0 + 0x1.8p-8, kBf16) == 1.0 + 0x1p-7);
  // 255.5 ties between 255 (odd mantissa) and 256 (even)
  CHECK(round_nearest(255.5, kBf16) == 256.0);
  CHECK(round_nearest(256.0 - 0.5, kBf16) == 256.0);
  CHECK(round_nearest(-255.5, kBf16) == -256.0);
  // overflow rounds to infinity, underflow to (signed) zero
  CHECK(std::isinf(round_nearest(1e39, kBf16)));
  CHECK(round_nearest(1e39, kBf16) > 0);
  CHECK(round_nearest(-1e39, kBf16) == -std::numeric_limits<double>::infinity());
  CHECK(round_nearest(0x1p-134, kBf16) == 0.0);  // tie at half min_subnormal
  CHECK(round_nearest(0x1.2p-133, kBf16) == 0x1p-133);
  CHECK(std::signbit(round_nearest(-0x1p-140, kBf16)));
  CHECK(std::signbit(round_nearest(-0.0, kBf16)));
  CHECK(std::isnan(round_nearest(std::numeric_limits<double>::quiet_NaN(), kBf16)));
  // exactly max_finite + half-gap overflows (tie goes to the even mantissa,
  // which is the out-of-range 2^128); just below the midpoint stays at max
  double max = kBf16.max_finite();
  CHECK(std::isinf(round_nearest(max + 0x1p120, kBf16)));
  CHECK(std::isinf(round_nearest(max + 0x1p119, kBf16)));
  CHECK(round_nearest(max + 0x1p118, kBf16) == max);
  CHECK(round_nearest(65519.0, kFp16) == 65504.0);
  CHECK(std::isinf(round_nearest(65520.0, kFp16)));  // the fp16 overflow tie
}

TEST_CASE("round-trip over every 16-bit pattern") {
  for (const FloatFormat& f : {kBf16, kFp16}) {
    uint32_t canonical_nan =
        (((1u << f.exponent_bits) - 1u) << f.mantissa_bits) |
        (1u << (f.mantissa_bits - 1));
    for (uint32_t b = 0; b < (1u << 16); ++b) {
      double v = decode(b, f);
      if (is_nan_pattern(b, f)) {
        CHECK(std::isnan(v));
        CHECK(encode(v, f) == canonical_nan);
      } else {
        CHECK(encode(v, f) == b);
        CHECK(is_representable(v, f));
        if (!std::isinf(v)) CHECK(round_nearest(v, f) == v);
      }
    }
  }
}

TEST_CASE("adjacency: next_up/next_down walk the whole positive range") {
  const FloatFormat f = kBf16;
  uint32_t max_mag = encode(f.max_finite(), f);
  for (uint32_t mag = 0; mag < max_mag; ++mag) {
    double v = decode(mag, f);
    double w = decode(mag + 1, f);
    CHECK(next_up(v, f) == w);
    CHECK(next_down(w, f) == v);
  }
  CHECK(next_up(f.max_finite(), f) == std::numeric_limits<double>::infinity());
  CHECK(next_up(0.0, f) == f.min_subnormal());
  CHECK(next_down(0.0, f) == -f.min_subnormal());
  CHECK(next_down(f.min_subnormal(), f) == 0.0);
  CHECK(next_up(-f.min_subnormal(), f) == 0.0);
  CHECK(next_down(-255.0, f) == -256.0);
  CHECK(next_down(1.0, f) == 1.0 - 0x1p-8);  // finer spacing below a binade
}

TEST_CASE("adjacent-spacing contract: eps|u| <= |u - v| <= 2 eps|u|") {
  const FloatFormat f = kBf16;
  double eps = f.machine_epsilon();
  for (double u = f.min_normal(); u < f.max_finite();) {
    double v = next_up(u, f);
    double gap = v - u;
    CHECK(gap >= eps * u);
    CHECK(gap <= 2 * eps * u);
    // stride through the range: every 13th value keeps the loop cheap while
    // still crossing every binade boundary
    for (int k = 0; k < 13 && u < f.max_finite(); ++k) u = next_up(u, f);
  }
}

TEST_CASE("neighbors") {
  auto [l1, u1] = neighbors(255.5, kBf16);
  CHECK(l1 == 255.0);
  CHECK(u1 == 256.0);
  auto [l2, u2] = neighbors(257.0, kBf16);
  CHECK(l2 == 256.0);
  CHECK(u2 == 258.0);
  auto [l3, u3] = neighbors(1.0, kBf16);
  CHECK(l3 == 1.0);
  CHECK(u3 == 1.0);
  auto [l4, u4] = neighbors(-255.5, kBf16);
  CHECK(l4 == -256.0);
  CHECK(u4 == -255.0);
  auto [l5, u5] = neighbors(0x1p-140, kBf16);  // below min_subnormal
  CHECK(l5 == 0.0);
  CHECK(u5 == 0x1p-133);
  CHECK_THROWS_AS(neighbors(1e39, kBf16), NumericError);
  CHECK_THROWS_AS(neighbors(std::numeric_limits<double>::quiet_NaN(), kBf16),
                  NumericError);
}

TEST_CASE("round_nearest against the neighbors oracle (fuzz)") {
  const FloatFormat f = kBf16;
  RngStream rng(2024, stream_id_from("formats-fuzz"));
  double prev_x = -std::numeric_limits<double>::infinity();
  double prev_r = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200000; ++i) {
    // log-uniform magnitude covering subnormals through near-overflow
    double mag = std::ldexp(1.0 + rng.uniform01(),
                            static_cast<int>(rng.uniform_below(268)) - 140);
    double x = rng.uniform01() < 0.5 ? mag : -mag;
    if (std::fabs(x) > f.max_finite()) continue;
    auto [lo, hi] = neighbors(x, f);
    CHECK(lo <= x);
    CHECK(x <= hi);
    CHECK(is_representable(lo, f));
    CHECK(is_representable(hi, f));
    if (lo != hi) CHECK(next_up(lo, f) == hi);
    double r = round_nearest(x, f);
    CHECK((r == lo || r == hi));
    double dl = x - lo, dh = hi - x;
    if (dl < dh) CHECK(r == lo);
    if (dh < dl) CHECK(r == hi);
    if (lo != hi && dl == dh) CHECK((encode(r, f) & 1u) == 0);  // tie -> even
    // monotonicity across consecutive fuzz draws
    if (x >= prev_x) CHECK(r >= prev_r);
    if (x <= prev_x) CHECK(r <= prev_r);
    prev_x = x;
    prev_r = r;
  }
}

TEST_CASE("relative error bound for normals") {
  const FloatFormat f = kBf16;
  double eps = f.machine_epsilon();
  RngStream rng(7, stream_id_from("relerr"));
  for (int i = 0; i < 100000; ++i) {
    double x = std::ldexp(1.0 + rng.uniform01(),
                          static_cast<int>(rng.uniform_below(253)) - 126);
    double r = round_nearest(x, f);
    CHECK(std::fabs(r - x) <= eps * std::fabs(x));
  }
}

TEST_CASE("fp32 carrier rounds exactly like float arithmetic") {
  const FloatFormat f = FloatFormat::fp32();
  RngStream rng(99, stream_id_from("fp32-vs-float"));
  for (int i = 0; i < 100000; ++i) {
    double mag = std::ldexp(1.0 + rng.uniform01(),
                            static_cast<int>(rng.uniform_below(300)) - 160);
    double x = rng.uniform01() < 0.5 ? mag : -mag;
    double want = static_cast<double>(static_cast<float>(x));
    CHECK(round_nearest(x, f) == want);
  }
  CHECK(std::isinf(round_nearest(1e39, f)));
  CHECK(f.machine_epsilon() == 0x1p-24);
}

TEST_CASE("exact carrier is the identity") {
  const FloatFormat f = FloatFormat::exact();
  CHECK(round_nearest(0.1, f) == 0.1);
  CHECK(is_representable(1e300, f));
  auto [lo, hi] = neighbors(0.1, f);
  CHECK(lo == 0.1);
  CHECK(hi == 0.1);
  CHECK(f.machine_epsilon() == 0x1p-53);
}

TEST_CASE("stochastic rounding basics") {
  RngStream rng(123, stream_id_from("stoch"));
  // representable input: identity, but exactly one draw is consumed
  uint64_t c0 = rng.counter();
  CHECK(round_stochastic(1.0, kBf16, rng) == 1.0);
  CHECK(rng.counter() == c0 + 1);
  // midpoint splits ~50/50
  int hi_count = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double r = round_stochastic(255.5, kBf16, rng);
    CHECK((r == 255.0 || r == 256.0));
    if (r == 256.0) ++hi_count;
  }
  double p = static_cast<double>(hi_count) / n;
  CHECK(std::fabs(p - 0.5) < 4.0 * 0.5 / std::sqrt(static_cast<double>(n)));
  // expectation preserved at an asymmetric point: 1 + 2^-10 rounds up w.p. 1/8
  int ups = 0;
  for (int i = 0; i < n; ++i)
    if (round_stochastic(1.0 + 0x1p-10, kBf16, rng) > 1.0) ++ups;
  double pu = static_cast<double>(ups) / n;
  double se = std::sqrt(0.125 * 0.875 / n);
  CHECK(std::fabs(pu - 0.125) < 4.0 * se);
  // overflow and NaN are errors under stochastic rounding
  CHECK_THROWS_AS(round_stochastic(1e39, kBf16, rng), NumericError);
  CHECK_THROWS_AS(
      round_stochastic(std::numeric_limits<double>::quiet_NaN(), kBf16, rng),
      NumericError);
  // dispatch: stochastic mode without a stream is a configuration error
  CHECK_THROWS_AS(round_value(0.1, kBf16, RoundingMode::Stochastic, nullptr),
                  ConfigError);
}
