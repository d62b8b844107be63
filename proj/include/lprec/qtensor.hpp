// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/formats.hpp"

namespace lprec {

// Dense row-major tensor whose every element is representable in its format.
// Elements are stored as binary64 doubles (the carrier); the invariant is
// maintained by construction: all mutation goes through rounding or the
// checked set().
class QTensor {
 public:
  QTensor() = default;

  static QTensor zeros(std::size_t rows, std::size_t cols,
                       const FloatFormat& fmt) {
    QTensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.fmt_ = fmt;
    t.data_.assign(rows * cols, 0.0);
    return t;
  }

  static QTensor zeros_vec(std::size_t n, const FloatFormat& fmt) {
    return zeros(n, 1, fmt);
  }

  // quantize a 64-bit buffer into the format (one rounding per element)
  static QTensor quantized(std::span<const double> vals, std::size_t rows,
                           std::size_t cols, const FloatFormat& fmt,
                           RoundingMode mode, RngStream* rng);
  static QTensor quantized_vec(std::span<const double> vals,
                               const FloatFormat& fmt, RoundingMode mode,
                               RngStream* rng) {
    return quantized(vals, vals.size(), 1, fmt, mode, rng);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  const FloatFormat& fmt() const { return fmt_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  const std::vector<double>& data() const { return data_; }
  std::span<const double> span() const { return data_; }

  // checked write: v must already be representable
  void set(std::size_t i, double v) {
    if (!is_representable(v, fmt_))
      throw NumericError("QTensor::set: value not representable in " +
                         fmt_.name());
    data_[i] = v;
  }

  // write with rounding
  void set_rounded(std::size_t i, double v, RoundingMode mode, RngStream* rng) {
    data_[i] = round_value(v, fmt_, mode, rng);
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  FloatFormat fmt_;
  std::vector<double> data_;
};

}  // namespace lprec
