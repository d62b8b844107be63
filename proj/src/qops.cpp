// SPDX-License-Identifier: Apache-2.0
#include "lprec/qops.hpp"

#include <cmath>
#include <string>

#include "lprec/rng.hpp"

namespace lprec {

namespace {

void check_same_shape(const QTensor& a, const QTensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch");
  if (!(a.fmt() == b.fmt()))
    throw ConfigError(std::string(op) + ": format mismatch (" +
                      a.fmt().name() + " vs " + b.fmt().name() + ")");
}

template <typename F>
QTensor elementwise(const QTensor& a, RoundingMode mode, RngStream* rng, F f) {
  QTensor out = QTensor::zeros(a.rows(), a.cols(), a.fmt());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.set_rounded(i, f(i), mode, rng);
  return out;
}

}  // namespace

QTensor QTensor::quantized(std::span<const double> vals, std::size_t rows,
                           std::size_t cols, const FloatFormat& fmt,
                           RoundingMode mode, RngStream* rng) {
  if (vals.size() != rows * cols)
    throw ConfigError("QTensor::quantized: size mismatch");
  QTensor t = zeros(rows, cols, fmt);
  for (std::size_t i = 0; i < vals.size(); ++i)
    t.set_rounded(i, vals[i], mode, rng);
  return t;
}

double accumulate_dot(std::span<const double> x, std::span<const double> y,
                      double trailing_addend, AccumPrecision acc) {
  if (acc == AccumPrecision::Wide32) {
    float a = 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i)
      a += static_cast<float>(x[i]) * static_cast<float>(y[i]);
    a += static_cast<float>(trailing_addend);
    return static_cast<double>(a);
  }
  double a = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) a += x[i] * y[i];
  a += trailing_addend;
  return a;
}

double qdot(const QTensor& x, const QTensor& y, RoundingMode mode,
            AccumPrecision acc, RngStream* rng) {
  check_same_shape(x, y, "qdot");
  double a = accumulate_dot(x.span(), y.span(), 0.0, acc);
  if (!std::isfinite(a)) throw NumericError("qdot: non-finite accumulator");
  return round_value(a, x.fmt(), mode, rng);
}

QTensor qmatvec(const QTensor& a, const QTensor& x, RoundingMode mode,
                AccumPrecision acc, RngStream* rng) {
  if (a.cols() != x.size())
    throw ConfigError("qmatvec: inner dimension mismatch");
  if (!(a.fmt() == x.fmt())) throw ConfigError("qmatvec: format mismatch");
  QTensor out = QTensor::zeros_vec(a.rows(), a.fmt());
  std::span<const double> xs = x.span();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::span<const double> row = a.span().subspan(r * a.cols(), a.cols());
    double acc_val = accumulate_dot(row, xs, 0.0, acc);
    if (!std::isfinite(acc_val))
      throw NumericError("qmatvec: non-finite accumulator");
    out.set_rounded(r, acc_val, mode, rng);
  }
  return out;
}

QTensor qadd(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng) {
  check_same_shape(a, b, "qadd");
  return elementwise(a, mode, rng, [&](std::size_t i) { return a[i] + b[i]; });
}

QTensor qsub(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng) {
  check_same_shape(a, b, "qsub");
  return elementwise(a, mode, rng, [&](std::size_t i) { return a[i] - b[i]; });
}

QTensor qmul(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng) {
  check_same_shape(a, b, "qmul");
  return elementwise(a, mode, rng, [&](std::size_t i) { return a[i] * b[i]; });
}

QTensor qscale(const QTensor& a, double s, RoundingMode mode, RngStream* rng) {
  if (!is_representable(s, a.fmt()))
    throw ConfigError("qscale: scalar not representable in " + a.fmt().name());
  return elementwise(a, mode, rng, [&](std::size_t i) { return a[i] * s; });
}

}  // namespace lprec
