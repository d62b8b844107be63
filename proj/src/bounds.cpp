// SPDX-License-Identifier: Apache-2.0
#include "lprec/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/rng.hpp"

namespace lprec {

namespace {

double min_abs(std::span<const double> v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, std::abs(x));
  return m;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_cancellation_params(const CancellationParams& p) {
  if (!(p.eps >= 0.0) || !(p.alpha >= 0.0) || !(p.L >= 0.0))
    throw ConfigError("cancellation bound: eps, alpha, L must be >= 0");
  if (p.w_star.empty())
    throw ConfigError("cancellation bound: w_star must be non-empty");
  if (p.alpha * p.L + p.eps <= 0.0)
    throw ConfigError("cancellation bound: alpha*L + eps must be positive");
}

// unit vector from d independent standard normals
std::vector<double> random_direction(std::size_t d, RngStream& rng) {
  std::vector<double> u(d);
  double n = 0.0;
  do {
    for (std::size_t j = 0; j < d; ++j) u[j] = rng.normal();
    n = norm(u);
  } while (n == 0.0);
  for (double& x : u) x /= n;
  return u;
}

// representable start point at roughly `distance` from w*
QTensor snapped_offset_point(const LsqInstance& inst, double distance,
                             const FloatFormat& fmt, RngStream& rng) {
  std::vector<double> u = random_direction(inst.d, rng);
  QTensor w = QTensor::zeros_vec(inst.d, fmt);
  for (std::size_t j = 0; j < inst.d; ++j)
    w.set(j, round_nearest(inst.w_star[j] + distance * u[j], fmt));
  return w;
}

double ulp64(double x) {
  return std::nextafter(x, std::numeric_limits<double>::infinity()) - x;
}

constexpr const char* kW0Stream = "bounds/w0";

// one nearest-rounded SGD write per coordinate; true iff no bit moved
bool step_cancels(const QTensor& w, std::span<const double> grad, double alpha,
                  const FloatFormat& fmt) {
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double next = round_nearest(w[j] - alpha * grad[j], fmt);
    if (encode(next, fmt) != encode(w[j], fmt)) return false;
  }
  return true;
}

}  // namespace

QTensor offset_start_point(const LsqInstance& inst, double distance,
                           const FloatFormat& fmt, std::uint64_t seed) {
  RngStream rng(seed, stream_id_from(kW0Stream));
  return snapped_offset_point(inst, distance, fmt, rng);
}

double cancellation_radius(const CancellationParams& p) {
  check_cancellation_params(p);
  return p.eps / (p.alpha * p.L + p.eps) * min_abs(p.w_star);
}

double halting_lower_bound(const CancellationParams& p) {
  check_cancellation_params(p);
  if (p.alpha * p.L > 1.0)
    throw ConfigError("halting_lower_bound requires alpha*L <= 1");
  if (p.w0.size() != p.w_star.size())
    throw ConfigError("halting_lower_bound: w0 and w_star sizes differ");
  double d0 = 0.0;
  for (std::size_t j = 0; j < p.w0.size(); ++j) {
    const double t = p.w0[j] - p.w_star[j];
    d0 += t * t;
  }
  d0 = std::sqrt(d0);
  const double stall =
      p.eps * (1.0 - p.alpha * p.L) / (p.alpha * p.L + p.eps) * min_abs(p.w_star);
  return std::min(stall, d0);
}

ConvergenceBound convergence_error_bound(const ConvergenceBoundParams& p) {
  if (!(p.alpha >= 0.0) || !(p.L >= 0.0) || !(p.eps >= 0.0) || !(p.t >= 0.0) ||
      !(p.d0_sq >= 0.0))
    throw ConfigError("convergence bound: parameters must be >= 0");
  if (!(p.mu > 0.0))
    throw ConfigError("convergence bound requires mu > 0");
  if (p.alpha * p.L > 1.0)
    throw ConfigError("convergence bound requires alpha*L <= 1");
  const double drag = 4.0 * p.eps * p.L / p.mu;
  ConvergenceBound b;
  b.vacuous = drag >= 1.0;
  b.value = std::exp(-p.alpha * p.mu * p.t * (1.0 - drag)) * p.d0_sq;
  return b;
}

bool predict_halt(const QTensor& w, const LsqInstance& inst, double alpha,
                  const FloatFormat& fmt) {
  if (inst.noise_std != 0.0)
    throw ConfigError("predict_halt requires a noiseless instance");
  if (w.size() != inst.d)
    throw ConfigError("predict_halt: weight size does not match instance");
  CancellationParams p;
  p.eps = fmt.machine_epsilon();
  p.alpha = alpha;
  p.L = inst.constants.L;
  p.w_star = inst.w_star;
  const double dist = std::sqrt(dist2_to_optimum(w.span(), inst));
  return dist <= cancellation_radius(p);
}

SufficiencyReport check_cancellation_sufficiency(const LsqInstance& inst,
                                                 double alpha,
                                                 const FloatFormat& fmt,
                                                 std::size_t inside_probes,
                                                 std::uint64_t seed) {
  if (inst.noise_std != 0.0)
    throw ConfigError("sufficiency check requires a noiseless instance");
  CancellationParams cp;
  cp.eps = fmt.machine_epsilon();
  cp.alpha = alpha;
  cp.L = inst.constants.L;
  cp.w_star = inst.w_star;
  const double radius = cancellation_radius(cp);

  SufficiencyReport rep;
  rep.radius = radius;

  RngStream rng(seed, stream_id_from("bounds/probes"));
  const std::size_t max_attempts = 200 * std::max<std::size_t>(inside_probes, 1);

  // Draw a representable probe whose measured distance lands in
  // (lo_frac, hi_frac] * radius; snapping can move the point, so resample
  // until the measured distance is in range.
  auto draw_probe = [&](double lo_frac, double hi_frac, QTensor& w,
                        double& dist) {
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
      const double s = radius * (lo_frac + (hi_frac - lo_frac) * rng.uniform01());
      std::vector<double> u = random_direction(inst.d, rng);
      w = QTensor::zeros_vec(inst.d, fmt);
      for (std::size_t j = 0; j < inst.d; ++j)
        w.set(j, round_nearest(inst.w_star[j] + s * u[j], fmt));
      dist = std::sqrt(dist2_to_optimum(w.span(), inst));
      const bool want_inside = hi_frac <= 1.0;
      if (want_inside ? (dist <= radius) : (dist > radius)) return;
    }
    throw ConfigError(
        "sufficiency check: could not sample a probe at the requested "
        "distance; the format's grid is too coarse for this radius");
  };

  auto sweep = [&](const QTensor& w) {
    bool all = true;
    for (std::size_t i = 0; i < inst.n; ++i) {
      const std::vector<double> g = lsq_grad_exact(w.span(), inst, i);
      ++rep.pair_checks;
      if (!step_cancels(w, g, alpha, fmt)) all = false;
    }
    return all;
  };

  // probes inside the radius: every (probe, sample) update must cancel
  for (std::size_t k = 0; k < inside_probes; ++k) {
    QTensor w;
    double dist = 0.0;
    draw_probe(0.2, 1.0, w, dist);
    SufficiencyProbe pr;
    pr.id = rep.probes.size();
    pr.distance = dist;
    pr.radius = radius;
    pr.predicted = true;
    pr.cancelled_all_samples = sweep(w);
    rep.inside_pair_checks += inst.n;
    if (!pr.cancelled_all_samples) ++rep.counterexamples;
    rep.probes.push_back(pr);
  }

  // probes outside the radius: observations only (the radius is sufficient,
  // not necessary, so these may or may not cancel)
  for (std::size_t k = 0; k < inside_probes; ++k) {
    QTensor w;
    double dist = 0.0;
    draw_probe(1.0, 3.0, w, dist);
    SufficiencyProbe pr;
    pr.id = rep.probes.size();
    pr.distance = dist;
    pr.radius = radius;
    pr.predicted = false;
    pr.cancelled_all_samples = sweep(w);
    rep.probes.push_back(pr);
  }

  return rep;
}

TrajectoryReport run_halting_check(const LsqInstance& inst, double alpha,
                                   const FloatFormat& fmt, std::size_t steps,
                                   double w0_distance, std::uint64_t seed) {
  if (inst.noise_std != 0.0)
    throw ConfigError("halting check requires a noiseless instance");

  QTensor w = offset_start_point(inst, w0_distance, fmt, seed);

  CancellationParams cp;
  cp.eps = fmt.machine_epsilon();
  cp.alpha = alpha;
  cp.L = inst.constants.L;
  cp.w_star = inst.w_star;
  cp.w0.assign(w.span().begin(), w.span().end());

  TrajectoryReport rep;
  rep.lower_bound = halting_lower_bound(cp);
  rep.steps = steps;
  rep.min_distance = std::sqrt(dist2_to_optimum(w.span(), inst));
  rep.violated = rep.min_distance + 2.0 * ulp64(rep.min_distance) < rep.lower_bound;

  RngStream samples(seed, stream_id_from("sample-index"));
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t i = static_cast<std::size_t>(samples.uniform_below(inst.n));
    const std::vector<double> g = lsq_grad_exact(w.span(), inst, i);
    for (std::size_t j = 0; j < inst.d; ++j)
      w.set(j, round_nearest(w[j] - alpha * g[j], fmt));
    const double dist = std::sqrt(dist2_to_optimum(w.span(), inst));
    rep.min_distance = std::min(rep.min_distance, dist);
    if (dist + 2.0 * ulp64(dist) < rep.lower_bound) rep.violated = true;
    rep.final_distance = dist;
  }
  if (steps == 0) rep.final_distance = rep.min_distance;
  return rep;
}

ConvergenceReport run_convergence_check(const LsqInstance& inst, double alpha,
                                        const FloatFormat& fmt,
                                        std::size_t steps,
                                        std::span<const std::uint64_t> seeds,
                                        std::span<const std::uint64_t> checkpoints,
                                        double w0_distance,
                                        std::uint64_t w0_seed) {
  if (inst.noise_std != 0.0)
    throw ConfigError("convergence check requires a noiseless instance");
  if (inst.constants.mu_flagged)
    throw ConfigError("convergence check requires a nonsingular covariance");
  if (seeds.empty()) throw ConfigError("convergence check: no seeds given");
  for (std::uint64_t c : checkpoints)
    if (c == 0 || c > steps)
      throw ConfigError("convergence check: checkpoints must be in [1, steps]");

  const FloatFormat master = FloatFormat::fp32();
  const double alpha_m = round_nearest(alpha, master);
  const LsqView view(inst, fmt);

  const QTensor w0 = offset_start_point(inst, w0_distance, master, w0_seed);

  ConvergenceReport rep;
  rep.d0_sq = dist2_to_optimum(w0.span(), inst);

  std::vector<double> acc(checkpoints.size(), 0.0);
  double final_dist_acc = 0.0;

  for (std::uint64_t seed : seeds) {
    QTensor w = w0;
    RngStream samples(seed, stream_id_from("sample-index"));
    for (std::size_t t = 1; t <= steps; ++t) {
      const std::size_t i =
          static_cast<std::size_t>(samples.uniform_below(inst.n));
      const QTensor g = lsq_grad_quantized(w, view, i, RoundingMode::NearestTiesToEven,
                                           nullptr);
      for (std::size_t j = 0; j < inst.d; ++j) {
        const double u = round_nearest(alpha_m * g[j], master);
        w.set(j, round_nearest(w[j] - u, master));
      }
      for (std::size_t c = 0; c < checkpoints.size(); ++c)
        if (checkpoints[c] == t) acc[c] += dist2_to_optimum(w.span(), inst);
    }
    final_dist_acc += std::sqrt(dist2_to_optimum(w.span(), inst));
  }

  rep.final_mean_distance = final_dist_acc / static_cast<double>(seeds.size());
  rep.all_within = true;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    ConvergenceBoundParams bp;
    bp.alpha = alpha;
    bp.mu = inst.constants.mu;
    bp.L = inst.constants.L;
    bp.eps = fmt.machine_epsilon();
    bp.t = static_cast<double>(checkpoints[c]);
    bp.d0_sq = rep.d0_sq;
    const ConvergenceBound b = convergence_error_bound(bp);
    ConvergenceCheckpointResult r;
    r.t = checkpoints[c];
    r.mean_dist_sq = acc[c] / static_cast<double>(seeds.size());
    r.bound = b.value;
    r.vacuous = b.vacuous;
    r.within = b.vacuous || r.mean_dist_sq <= b.value;
    if (!r.within) rep.all_within = false;
    rep.checkpoints.push_back(r);
  }
  return rep;
}

}  // namespace lprec
