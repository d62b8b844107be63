// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/qops.hpp"
#include "lprec/rng.hpp"

using namespace lprec;

namespace {
const FloatFormat kBf16 = FloatFormat::bf16();
constexpr RoundingMode kNearest = RoundingMode::NearestTiesToEven;

// random bf16-representable vector
std::vector<double> rand_repr(int n, RngStream& rng, double scale = 4.0) {
  std::vector<double> v(n);
  for (auto& e : v)
    e = round_nearest(scale * (rng.uniform01() - 0.5), kBf16);
  return v;
}
}  // namespace

TEST_CASE("QTensor construction and checked writes") {
  QTensor z = QTensor::zeros(2, 3, kBf16);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  CHECK(z.size() == 6);
  CHECK(z.at(1, 2) == 0.0);
  z.set(0, 1.0);
  CHECK(z[0] == 1.0);
  CHECK_THROWS_AS(z.set(1, 0.1), NumericError);  // 0.1 not a bf16 value
  z.set_rounded(1, 0.1, kNearest, nullptr);
  CHECK(z[1] == 0.10009765625);

  double raw[4] = {0.1, 0.2, 0.3, 0.4};
  QTensor q = QTensor::quantized(raw, 2, 2, kBf16, kNearest, nullptr);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(q[i] == round_nearest(raw[i], kBf16));
}

TEST_CASE("accumulate_dot matches a plain float/double loop") {
  RngStream rng(31, stream_id_from("accum"));
  for (int trial = 0; trial < 200; ++trial) {
    auto x = rand_repr(33, rng);
    auto y = rand_repr(33, rng);
    double tail = round_nearest(rng.uniform01(), kBf16);

    float f = 0.0f;
    for (int i = 0; i < 33; ++i)
      f += static_cast<float>(x[i]) * static_cast<float>(y[i]);
    f += static_cast<float>(tail);
    CHECK(accumulate_dot(x, y, tail, AccumPrecision::Wide32) ==
          static_cast<double>(f));

    double d = 0.0;
    for (int i = 0; i < 33; ++i) d += x[i] * y[i];
    d += tail;
    CHECK(accumulate_dot(x, y, tail, AccumPrecision::Wide64) == d);
  }
}

TEST_CASE("accumulation order is left-to-right (absorption is visible)") {
  // 2^24 + 1 is absorbed in binary32; a reordered or widened accumulator
  // would return 1 instead of 0.
  std::vector<double> x = {0x1p24, 1.0, -0x1p24};
  std::vector<double> y = {1.0, 1.0, 1.0};
  QTensor xt = QTensor::quantized(x, 3, 1, kBf16, kNearest, nullptr);
  QTensor yt = QTensor::quantized(y, 3, 1, kBf16, kNearest, nullptr);
  CHECK(qdot(xt, yt, kNearest, AccumPrecision::Wide32, nullptr) == 0.0);
  CHECK(qdot(xt, yt, kNearest, AccumPrecision::Wide64, nullptr) == 1.0);
}

TEST_CASE("qdot rounds the accumulator exactly once") {
  // exact dot = 1 + 2^-8, the midpoint: a single nearest rounding gives 1.0
  std::vector<double> x = {1.0, 0x1p-8};
  std::vector<double> y = {1.0, 1.0};
  QTensor xt = QTensor::quantized(x, 2, 1, kBf16, kNearest, nullptr);
  QTensor yt = QTensor::quantized(y, 2, 1, kBf16, kNearest, nullptr);
  CHECK(qdot(xt, yt, kNearest, AccumPrecision::Wide32, nullptr) == 1.0);
  CHECK(qdot(xt, yt, kNearest, AccumPrecision::Wide64, nullptr) == 1.0);
}

TEST_CASE("long unit-scale sums accumulate exactly in binary32") {
  std::vector<double> ones(300, 1.0);
  QTensor t = QTensor::quantized(ones, 300, 1, kBf16, kNearest, nullptr);
  CHECK(qdot(t, t, kNearest, AccumPrecision::Wide32, nullptr) == 300.0);
}

TEST_CASE("Wide32 accumulator stays within eps/4 of the Wide64 oracle") {
  RngStream rng(271, stream_id_from("wide32-drift"));
  double eps = kBf16.machine_epsilon();
  for (int trial = 0; trial < 50; ++trial) {
    auto x = rand_repr(1024, rng, 2.0);
    auto y = rand_repr(1024, rng, 2.0);
    double a32 = accumulate_dot(x, y, 0.0, AccumPrecision::Wide32);
    double a64 = accumulate_dot(x, y, 0.0, AccumPrecision::Wide64);
    double mass = 0.0;
    for (int i = 0; i < 1024; ++i) mass += std::fabs(x[i] * y[i]);
    CHECK(std::fabs(a32 - a64) <= 0.25 * eps * mass);

    // single-rounding property of the quantized dot against the exact value
    QTensor xt = QTensor::quantized(x, x.size(), 1, kBf16, kNearest, nullptr);
    QTensor yt = QTensor::quantized(y, y.size(), 1, kBf16, kNearest, nullptr);
    double q32 = qdot(xt, yt, kNearest, AccumPrecision::Wide32, nullptr);
    CHECK(std::fabs(q32 - a64) <=
          eps * std::fabs(a64) + 0.25 * eps * mass);
  }
}

TEST_CASE("exact-carrier Wide64 qdot equals direct binary64 arithmetic") {
  const FloatFormat ex = FloatFormat::exact();
  RngStream rng(83, stream_id_from("oracle-eq"));
  for (int trial = 0; trial < 10000; ++trial) {
    std::size_t n = 1 + rng.uniform_below(8);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    QTensor xt = QTensor::quantized(x, n, 1, ex, kNearest, nullptr);
    QTensor yt = QTensor::quantized(y, n, 1, ex, kNearest, nullptr);
    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) want += x[i] * y[i];
    CHECK(qdot(xt, yt, kNearest, AccumPrecision::Wide64, nullptr) == want);
  }
}

TEST_CASE("qdot error paths") {
  QTensor a = QTensor::zeros_vec(3, kBf16);
  QTensor b = QTensor::zeros_vec(4, kBf16);
  CHECK_THROWS_AS(qdot(a, b, kNearest, AccumPrecision::Wide64, nullptr),
                  ConfigError);
  QTensor c = QTensor::zeros_vec(3, FloatFormat::fp16());
  CHECK_THROWS_AS(qdot(a, c, kNearest, AccumPrecision::Wide64, nullptr),
                  ConfigError);

  // binary32 accumulator overflow -> non-finite -> NumericError;
  // the binary64 accumulator survives and rounds to +inf
  double m = kBf16.max_finite();
  std::vector<double> big = {m, m};
  QTensor bt = QTensor::quantized(big, 2, 1, kBf16, kNearest, nullptr);
  CHECK_THROWS_AS(qdot(bt, bt, kNearest, AccumPrecision::Wide32, nullptr),
                  NumericError);
  CHECK(qdot(bt, bt, kNearest, AccumPrecision::Wide64, nullptr) ==
        std::numeric_limits<double>::infinity());
}

TEST_CASE("qmatvec equals row-wise qdot, including stochastic draw order") {
  RngStream data_rng(17, stream_id_from("mv-data"));
  const std::size_t r = 5, c = 7;
  auto avals = rand_repr(static_cast<int>(r * c), data_rng);
  auto xvals = rand_repr(static_cast<int>(c), data_rng);
  QTensor a = QTensor::quantized(avals, r, c, kBf16, kNearest, nullptr);
  QTensor x = QTensor::quantized(xvals, c, 1, kBf16, kNearest, nullptr);

  QTensor out = qmatvec(a, x, kNearest, AccumPrecision::Wide32, nullptr);
  CHECK(out.rows() == r);
  CHECK(out.cols() == 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> row(avals.begin() + static_cast<long>(i * c),
                            avals.begin() + static_cast<long>((i + 1) * c));
    QTensor rt = QTensor::quantized(row, c, 1, kBf16, kNearest, nullptr);
    CHECK(out[i] == qdot(rt, x, kNearest, AccumPrecision::Wide32, nullptr));
  }

  // stochastic: one draw per row, consumed in row order
  RngStream s1(9, stream_id_from("mv-stoch"));
  QTensor so = qmatvec(a, x, RoundingMode::Stochastic,
                       AccumPrecision::Wide32, &s1);
  CHECK(s1.counter() == r);
  RngStream s2(9, stream_id_from("mv-stoch"));
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> row(avals.begin() + static_cast<long>(i * c),
                            avals.begin() + static_cast<long>((i + 1) * c));
    QTensor rt = QTensor::quantized(row, c, 1, kBf16, kNearest, nullptr);
    CHECK(so[i] == qdot(rt, x, RoundingMode::Stochastic,
                        AccumPrecision::Wide32, &s2));
  }

  QTensor wrong = QTensor::zeros_vec(c + 1, kBf16);
  CHECK_THROWS_AS(qmatvec(a, wrong, kNearest, AccumPrecision::Wide32, nullptr),
                  ConfigError);
}

TEST_CASE("elementwise ops: exact binary64 op, one rounding per element") {
  RngStream rng(53, stream_id_from("elem"));
  auto av = rand_repr(64, rng);
  auto bv = rand_repr(64, rng);
  QTensor a = QTensor::quantized(av, 8, 8, kBf16, kNearest, nullptr);
  QTensor b = QTensor::quantized(bv, 8, 8, kBf16, kNearest, nullptr);

  QTensor s = qadd(a, b, kNearest, nullptr);
  QTensor d = qsub(a, b, kNearest, nullptr);
  QTensor p = qmul(a, b, kNearest, nullptr);
  for (std::size_t i = 0; i < 64; ++i) {
    // products and sums of these operands are exact in binary64, so rounding
    // the double result once is the exactly-rounded true result
    CHECK(s[i] == round_nearest(a[i] + b[i], kBf16));
    CHECK(d[i] == round_nearest(a[i] - b[i], kBf16));
    CHECK(p[i] == round_nearest(a[i] * b[i], kBf16));
  }

  QTensor h = qscale(a, 0.5, kNearest, nullptr);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(h[i] == round_nearest(0.5 * a[i], kBf16));
  CHECK_THROWS_AS(qscale(a, 0.1, kNearest, nullptr), ConfigError);

  QTensor mis = QTensor::zeros(8, 8, FloatFormat::fp16());
  CHECK_THROWS_AS(qadd(a, mis, kNearest, nullptr), ConfigError);
  QTensor shp = QTensor::zeros(4, 8, kBf16);
  CHECK_THROWS_AS(qadd(a, shp, kNearest, nullptr), ConfigError);

  // stochastic elementwise: exactly one draw per element
  RngStream sr(77, stream_id_from("elem-stoch"));
  (void)qadd(a, b, RoundingMode::Stochastic, &sr);
  CHECK(sr.counter() == 64);
}
