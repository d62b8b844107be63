// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lprec/lsq.hpp"
#include "lprec/qtensor.hpp"

namespace lprec {

// Parameters of the update-cancellation analysis for nearest-rounded SGD
// weight writes: machine epsilon of the weight format, learning rate, the
// per-sample gradient Lipschitz constant, the optimum, and the start point.
struct CancellationParams {
  double eps = 0.0;
  double alpha = 0.0;
  double L = 0.0;
  std::vector<double> w_star;
  std::vector<double> w0;  // needed by halting_lower_bound only
};

// Radius of the ball around w* inside which every SGD step on a noiseless
// instance is entirely cancelled by nearest rounding:
//   eps/(alpha*L + eps) * min_j |w*_j|
double cancellation_radius(const CancellationParams& p);

// Lower bound on the distance from the optimum that a nearest-rounded SGD
// trajectory can ever reach:
//   min( eps*(1 - alpha*L)/(alpha*L + eps) * min_j |w*_j| , ||w0 - w*|| )
// Requires alpha*L <= 1.
double halting_lower_bound(const CancellationParams& p);

// Parameters of the convergence upper bound for exact weight updates with
// nearest-rounded forward/backward passes.
struct ConvergenceBoundParams {
  double alpha = 0.0;
  double mu = 0.0;
  double L = 0.0;
  double eps = 0.0;
  double t = 0.0;       // step count
  double d0_sq = 0.0;   // ||w0 - w*||^2
};

struct ConvergenceBound {
  double value = 0.0;
  bool vacuous = false;  // 4*eps*L/mu >= 1: bound does not contract
};

//   exp(-alpha*mu*t*(1 - 4*eps*L/mu)) * d0_sq
// Vacuous bounds are returned as-is with the flag set.  Requires alpha*L <= 1.
ConvergenceBound convergence_error_bound(const ConvergenceBoundParams& p);

// True iff ||w - w*|| <= cancellation_radius for the instance's constants —
// a sufficient condition that every sample's step is fully cancelled.
// Requires a noiseless instance.
bool predict_halt(const QTensor& w, const LsqInstance& inst, double alpha,
                  const FloatFormat& fmt);

// Representable start point at roughly `distance` from w*: a direction is
// drawn from stream (seed, "bounds/w0") (normalized standard normals), then
// w*_j + distance * dir_j is nearest-rounded to fmt per coordinate.  The
// same construction the trajectory validators use for their start points.
QTensor offset_start_point(const LsqInstance& inst, double distance,
                           const FloatFormat& fmt, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Empirical validators
// ---------------------------------------------------------------------------

struct SufficiencyProbe {
  std::size_t id = 0;
  double distance = 0.0;
  double radius = 0.0;
  bool predicted = false;            // distance <= radius
  bool cancelled_all_samples = false;
};

struct SufficiencyReport {
  double radius = 0.0;
  std::size_t pair_checks = 0;        // all (probe, sample) update checks
  std::size_t inside_pair_checks = 0; // checks on probes inside the radius
  std::size_t counterexamples = 0;    // predicted probes with a moving update
  std::vector<SufficiencyProbe> probes;
};

// Samples `inside_probes` representable weight points with distance inside
// the radius (plus an equal number outside, reported as observations only)
// and sweeps every sample i, checking Q(w - alpha * grad_i(w)) == w bitwise
// per coordinate.  Requires a noiseless instance whose data and optimum are
// fmt-representable (gen_lsq_snapped).
SufficiencyReport check_cancellation_sufficiency(const LsqInstance& inst,
                                                 double alpha,
                                                 const FloatFormat& fmt,
                                                 std::size_t inside_probes,
                                                 std::uint64_t seed);

struct TrajectoryReport {
  double lower_bound = 0.0;
  double min_distance = 0.0;
  double final_distance = 0.0;
  std::size_t steps = 0;
  bool violated = false;  // some step got below the bound by > 2 ulp
};

// Nearest-rounded SGD trajectory w' = Q(w - alpha * grad_i(w)) with exact
// binary64 gradients on a noiseless instance, started at a representable
// point at roughly `w0_distance` from w*.  Verifies that the distance never
// falls below halting_lower_bound (2 ulp slack on the distance computation).
TrajectoryReport run_halting_check(const LsqInstance& inst, double alpha,
                                   const FloatFormat& fmt, std::size_t steps,
                                   double w0_distance, std::uint64_t seed);

struct ConvergenceCheckpointResult {
  std::uint64_t t = 0;
  double mean_dist_sq = 0.0;
  double bound = 0.0;
  bool vacuous = false;
  bool within = false;
};

struct ConvergenceReport {
  double d0_sq = 0.0;
  double final_mean_distance = 0.0;  // mean over seeds of final ||w - w*||
  std::vector<ConvergenceCheckpointResult> checkpoints;
  bool all_within = false;
};

// Exact-weight-update arm: weights live on the binary32 lattice and the
// update subtraction rounds to binary32 (no 16-bit rounding on the write),
// while gradients flow through the nearest-rounded 16-bit chain
// (lsq_grad_quantized) fed the binary32 master directly.  Reports the Monte
// Carlo mean of ||w_t - w*||^2 over the seeds against the convergence bound
// at each checkpoint.  All seeds share the same w0 (drawn from w0_seed).
ConvergenceReport run_convergence_check(const LsqInstance& inst, double alpha,
                                        const FloatFormat& fmt,
                                        std::size_t steps,
                                        std::span<const std::uint64_t> seeds,
                                        std::span<const std::uint64_t> checkpoints,
                                        double w0_distance,
                                        std::uint64_t w0_seed);

}  // namespace lprec
