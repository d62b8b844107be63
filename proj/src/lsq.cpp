// SPDX-License-Identifier: Apache-2.0
#include "lprec/lsq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lprec/errors.hpp"

namespace lprec {

namespace {

double off_diagonal_norm(const std::vector<double>& a, std::size_t d) {
  double s = 0.0;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c)
      if (r != c) s += a[r * d + c] * a[r * d + c];
  return std::sqrt(s);
}

// one cyclic sweep of Jacobi rotations over the upper triangle
void jacobi_sweep(std::vector<double>& a, std::size_t d) {
  for (std::size_t p = 0; p + 1 < d; ++p) {
    for (std::size_t q = p + 1; q < d; ++q) {
      double apq = a[p * d + q];
      if (apq == 0.0) continue;
      double app = a[p * d + p];
      double aqq = a[q * d + q];
      double tau = (aqq - app) / (2.0 * apq);
      double t = (tau >= 0.0 ? 1.0 : -1.0) /
                 (std::fabs(tau) + std::sqrt(tau * tau + 1.0));
      double c = 1.0 / std::sqrt(t * t + 1.0);
      double s = t * c;
      for (std::size_t k = 0; k < d; ++k) {
        double akp = a[k * d + p];
        double akq = a[k * d + q];
        a[k * d + p] = c * akp - s * akq;
        a[k * d + q] = s * akp + c * akq;
      }
      for (std::size_t k = 0; k < d; ++k) {
        double apk = a[p * d + k];
        double aqk = a[q * d + k];
        a[p * d + k] = c * apk - s * aqk;
        a[q * d + k] = s * apk + c * aqk;
      }
      a[p * d + q] = 0.0;
      a[q * d + p] = 0.0;
    }
  }
}

}  // namespace

DataConstants compute_constants(std::span<const double> x, std::size_t n,
                                std::size_t d) {
  if (d < 1 || n < d)
    throw ConfigError("compute_constants: need n >= d >= 1, got n=" +
                      std::to_string(n) + " d=" + std::to_string(d));
  if (x.size() != n * d)
    throw ConfigError("compute_constants: data size does not match n*d");

  DataConstants out;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    out.L = std::max(out.L, s);
  }

  // covariance C = (1/n) X^T X
  std::vector<double> c(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t q = r; q < d; ++q)
        c[r * d + q] += x[i * d + r] * x[i * d + q];
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t q = r; q < d; ++q) {
      c[r * d + q] /= static_cast<double>(n);
      c[q * d + r] = c[r * d + q];
    }

  for (int sweep = 0; sweep < 100 && off_diagonal_norm(c, d) > 1e-12; ++sweep)
    jacobi_sweep(c, d);

  double lo = c[0], hi = c[0];
  for (std::size_t r = 1; r < d; ++r) {
    lo = std::min(lo, c[r * d + r]);
    hi = std::max(hi, c[r * d + r]);
  }
  if (lo < 1e-10 * std::max(1.0, hi)) {
    out.mu = 0.0;
    out.mu_flagged = true;
  } else {
    out.mu = lo;
  }
  return out;
}

namespace {

// shared generation path; `fmt` (when non-null) snaps X and w* before the
// labels are formed
LsqInstance gen_impl(std::size_t d, std::size_t n, double w_lo, double w_hi,
                     double noise_std, std::uint64_t seed,
                     const FloatFormat* fmt) {
  if (d < 1 || n < d)
    throw ConfigError("gen_lsq: need n >= d >= 1, got n=" + std::to_string(n) +
                      " d=" + std::to_string(d));
  if (!(w_lo <= w_hi))
    throw ConfigError("gen_lsq: invalid w_range");
  if (noise_std < 0.0) throw ConfigError("gen_lsq: noise_std must be >= 0");

  LsqInstance inst;
  inst.d = d;
  inst.n = n;
  inst.seed = seed;
  inst.noise_std = noise_std;
  inst.w_lo = w_lo;
  inst.w_hi = w_hi;

  RngStream xs(seed, stream_id_from("lsq/x"));
  inst.x.resize(n * d);
  for (auto& v : inst.x) v = xs.normal();

  RngStream ws(seed, stream_id_from("lsq/wstar"));
  inst.w_star.resize(d);
  for (auto& v : inst.w_star) v = w_lo + (w_hi - w_lo) * ws.uniform01();

  if (fmt) {
    for (auto& v : inst.x) v = round_nearest(v, *fmt);
    for (auto& v : inst.w_star) v = round_nearest(v, *fmt);
  }

  RngStream ns(seed, stream_id_from("lsq/noise"));
  inst.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = accumulate_dot(inst.row(i), inst.w_star, 0.0,
                                AccumPrecision::Wide64);
    inst.y[i] = noise_std == 0.0 ? dot : dot + noise_std * ns.normal();
  }

  inst.constants = compute_constants(inst.x, n, d);
  return inst;
}

}  // namespace

LsqInstance gen_lsq(std::size_t d, std::size_t n, double w_lo, double w_hi,
                    double noise_std, std::uint64_t seed) {
  return gen_impl(d, n, w_lo, w_hi, noise_std, seed, nullptr);
}

LsqInstance gen_lsq_snapped(std::size_t d, std::size_t n, double w_lo,
                            double w_hi, std::uint64_t seed,
                            const FloatFormat& fmt) {
  return gen_impl(d, n, w_lo, w_hi, 0.0, seed, &fmt);
}

LsqInstance make_instance(std::vector<double> x, std::vector<double> y,
                          std::size_t n, std::size_t d) {
  if (x.size() != n * d || y.size() != n)
    throw ConfigError("make_instance: data sizes do not match n, d");
  LsqInstance inst;
  inst.d = d;
  inst.n = n;
  inst.x = std::move(x);
  inst.y = std::move(y);
  inst.w_star.assign(d, 0.0);
  inst.constants = compute_constants(inst.x, n, d);
  return inst;
}

LsqView::LsqView(const LsqInstance& inst, const FloatFormat& fmt)
    : inst_(&inst), fmt_(fmt) {
  x_q_ = QTensor::quantized(inst.x, inst.n, inst.d, fmt,
                            RoundingMode::NearestTiesToEven, nullptr);
}

namespace {

std::vector<double> grad_exact_impl(std::span<const double> w,
                                    std::span<const double> xrow, double y) {
  double r = accumulate_dot(xrow, w, -y, AccumPrecision::Wide64);
  std::vector<double> g(xrow.size());
  for (std::size_t j = 0; j < xrow.size(); ++j) g[j] = r * xrow[j];
  return g;
}

}  // namespace

std::vector<double> lsq_grad_exact(std::span<const double> w,
                                   const LsqInstance& inst, std::size_t i) {
  if (w.size() != inst.d) throw ConfigError("lsq_grad_exact: dimension mismatch");
  if (i >= inst.n) throw ConfigError("lsq_grad_exact: sample index out of range");
  return grad_exact_impl(w, inst.row(i), inst.y[i]);
}

std::vector<double> lsq_grad_exact(std::span<const double> w,
                                   const LsqView& view, std::size_t i) {
  if (w.size() != view.d()) throw ConfigError("lsq_grad_exact: dimension mismatch");
  if (i >= view.n()) throw ConfigError("lsq_grad_exact: sample index out of range");
  return grad_exact_impl(w, view.row(i), view.y(i));
}

QTensor lsq_grad_quantized(const QTensor& w, const LsqView& view,
                           std::size_t i, RoundingMode mode, RngStream* rng) {
  const std::size_t d = view.d();
  if (w.size() != d)
    throw ConfigError("lsq_grad_quantized: dimension mismatch");
  if (i >= view.n())
    throw ConfigError("lsq_grad_quantized: sample index out of range");
  const FloatFormat& fmt = view.fmt();

  std::span<const double> xrow = view.row(i);
  double raw = accumulate_dot(xrow, w.span(), -view.y(i),
                              AccumPrecision::Wide64);
  double a = round_value(raw, fmt, mode, rng);
  double g = round_value(a, fmt, mode, rng);
  if (mode == RoundingMode::NearestTiesToEven && g != a)
    throw NumericError(
        "lsq_grad_quantized: rounding moved an already-representable value");
  if (!std::isfinite(g))
    throw NumericError("lsq_grad_quantized: non-finite residual");

  QTensor grad = QTensor::zeros_vec(d, fmt);
  for (std::size_t j = 0; j < d; ++j) {
    double v = round_value(g * xrow[j], fmt, mode, rng);
    if (!std::isfinite(v))
      throw NumericError("lsq_grad_quantized: non-finite gradient entry");
    grad.set(j, v);
  }
  return grad;
}

namespace {

template <typename RowOf>
double full_loss_impl(std::span<const double> w, std::size_t n, RowOf row_of,
                      const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = accumulate_dot(row_of(i), w, -y[i], AccumPrecision::Wide64);
    s += r * r;
  }
  return s / (2.0 * static_cast<double>(n));
}

}  // namespace

double lsq_full_loss(std::span<const double> w, const LsqInstance& inst) {
  if (w.size() != inst.d) throw ConfigError("lsq_full_loss: dimension mismatch");
  return full_loss_impl(
      w, inst.n, [&inst](std::size_t i) { return inst.row(i); }, inst.y);
}

double lsq_full_loss(std::span<const double> w, const LsqView& view) {
  if (w.size() != view.d()) throw ConfigError("lsq_full_loss: dimension mismatch");
  return full_loss_impl(
      w, view.n(), [&view](std::size_t i) { return view.row(i); },
      view.inst().y);
}

double dist2_to_optimum(std::span<const double> w, const LsqInstance& inst) {
  if (w.size() != inst.d)
    throw ConfigError("dist2_to_optimum: dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < inst.d; ++j) {
    double e = w[j] - inst.w_star[j];
    s += e * e;
  }
  return s;
}

}  // namespace lprec
