// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lprec/qops.hpp"
#include "lprec/qtensor.hpp"
#include "lprec/rng.hpp"

namespace lprec {

// Curvature constants of a least-squares dataset: L bounds the per-sample
// gradient Lipschitz constant (max_i ||x_i||^2), mu is the smallest
// eigenvalue of the sample covariance (1/n) X^T X.
struct DataConstants {
  double L = 0.0;
  double mu = 0.0;
  bool mu_flagged = false;  // singular covariance: mu reported as 0
};

// L = max_i ||x_i||^2 in binary64; mu via cyclic Jacobi rotations run until
// the off-diagonal Frobenius norm falls below 1e-12.  Requires n >= d >= 1.
DataConstants compute_constants(std::span<const double> x, std::size_t n,
                                std::size_t d);

// Synthetic least-squares problem: minimize (1/2n) sum_i (x_i^T w - y_i)^2.
// Row-major binary64 master data; quantized copies are made per format by
// LsqView.  Labels are y_i = x_i^T w* (+ optional Gaussian noise), with the
// dot evaluated left-to-right so noiseless instances interpolate exactly.
struct LsqInstance {
  std::size_t d = 0, n = 0;
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  double w_lo = 0.0, w_hi = 0.0;
  std::vector<double> x;       // n*d
  std::vector<double> y;       // n
  std::vector<double> w_star;  // d (generating optimum)
  DataConstants constants;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(x).subspan(i * d, d);
  }
};

// X entries ~ N(0,1), w*_j ~ Uniform[w_lo, w_hi), y = Xw* + noise_std * N(0,1).
// Requires d >= 1, n >= d.
LsqInstance gen_lsq(std::size_t d, std::size_t n, double w_lo, double w_hi,
                    double noise_std, std::uint64_t seed);

// Same sampling, but X and w* are nearest-rounded to fmt before the labels
// are formed and noise is zero, so every sample satisfies y_i = x_i^T w*
// exactly over fmt-representable data (the interpolation assumption needed
// by the bound-validation runs).
LsqInstance gen_lsq_snapped(std::size_t d, std::size_t n, double w_lo,
                            double w_hi, std::uint64_t seed,
                            const FloatFormat& fmt);

// explicit data (hand-built examples); constants computed from x
LsqInstance make_instance(std::vector<double> x, std::vector<double> y,
                          std::size_t n, std::size_t d);

// Format view of an instance: the data matrix is nearest-quantized once at
// construction; labels stay binary64 masters and enter the gradient's inner
// product as the trailing addend at accumulator precision.
class LsqView {
 public:
  LsqView(const LsqInstance& inst, const FloatFormat& fmt);

  const LsqInstance& inst() const { return *inst_; }
  const FloatFormat& fmt() const { return fmt_; }
  std::size_t d() const { return inst_->d; }
  std::size_t n() const { return inst_->n; }
  std::span<const double> row(std::size_t i) const {
    return x_q_.span().subspan(i * inst_->d, inst_->d);
  }
  double y(std::size_t i) const { return inst_->y[i]; }

 private:
  const LsqInstance* inst_;
  FloatFormat fmt_;
  QTensor x_q_;
};

// plain binary64 per-sample gradient (x_i^T w - y_i) x_i on the master data
std::vector<double> lsq_grad_exact(std::span<const double> w,
                                   const LsqInstance& inst, std::size_t i);
// same, evaluated on a view's quantized data (binary64 arithmetic)
std::vector<double> lsq_grad_exact(std::span<const double> w,
                                   const LsqView& view, std::size_t i);

// Quantized per-sample gradient chain: the residual's inner product is exact
// in the wide accumulator, then three rounding points are applied in `mode`:
//   a = Q(x_i^T w - y_i);  g = Q(a);  grad_j = Q(g * x_ij).
// Q(a) is the identity under nearest rounding (a is already representable) —
// kept, and asserted, for fidelity to the operator chain.  The weights enter
// the inner product unrounded, so 16-bit, 32-bit-master, and binary64 weight
// carriers all flow through this same code path.  Non-finite values throw
// NumericError.
QTensor lsq_grad_quantized(const QTensor& w, const LsqView& view,
                           std::size_t i, RoundingMode mode, RngStream* rng);

// full-batch objective (1/2n) sum_i (x_i^T w - y_i)^2 in binary64
double lsq_full_loss(std::span<const double> w, const LsqInstance& inst);
double lsq_full_loss(std::span<const double> w, const LsqView& view);

// squared distance ||w - w*||^2 in binary64
double dist2_to_optimum(std::span<const double> w, const LsqInstance& inst);

}  // namespace lprec
