// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "lprec/qtensor.hpp"

namespace lprec {

// Accumulator width for dot products: models a fused multiply-accumulate
// pipeline with 16-bit operands and a wide accumulator.  Wide32 accumulates
// in IEEE binary32 (one binary32 rounding per accumulate; the products of
// sub-16-bit operands are exact in binary32).  Wide64 accumulates in binary64
// and serves as the oracle.
enum class AccumPrecision { Wide32, Wide64 };

// Running sum of x[i]*y[i] plus an optional trailing addend, evaluated
// left-to-right in the accumulator precision with no intermediate rounding to
// the operand format.  Returns the raw accumulator value (not yet rounded).
double accumulate_dot(std::span<const double> x, std::span<const double> y,
                      double trailing_addend, AccumPrecision acc);

// dot product with exactly one output rounding (to x's format, in `mode`).
// Inputs must share format and length; a non-finite accumulator value throws
// NumericError.
double qdot(const QTensor& x, const QTensor& y, RoundingMode mode,
            AccumPrecision acc, RngStream* rng);

// row-by-row qdot of an (r x c) matrix with a length-c vector; one output
// rounding per element, rows processed in order (stochastic draws are
// consumed row by row, so results are independent of any outer parallelism).
QTensor qmatvec(const QTensor& a, const QTensor& x, RoundingMode mode,
                AccumPrecision acc, RngStream* rng);

// elementwise ops: the exact binary64 result of the two representable inputs,
// rounded once per element in `mode`.
QTensor qadd(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng);
QTensor qsub(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng);
QTensor qmul(const QTensor& a, const QTensor& b, RoundingMode mode,
             RngStream* rng);
// multiply by a representable scalar
QTensor qscale(const QTensor& a, double s, RoundingMode mode, RngStream* rng);

}  // namespace lprec
