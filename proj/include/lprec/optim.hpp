// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lprec/qtensor.hpp"
#include "lprec/rng.hpp"

namespace lprec {

// How the final weight write is performed.  All other optimizer arithmetic
// uses nearest rounding, one rounding per listing line (inner arithmetic in
// binary64, the wide-accumulator model).
//   Nearest          w' = Q(w - u), ties to even
//   Stochastic       w' = Q_stoch(w - u): stochastic rounding on the
//                    subtraction output only
//   Kahan            compensated accumulation (kahan_apply), all nearest
//   KahanStochastic  kahan_apply with stochastic rounding on the accumulate
//                    line s = w + y only
//   Master32         weights live in binary32; the update subtraction rounds
//                    to binary32 (i.e. plain float arithmetic, no 16-bit
//                    rounding); a 16-bit shadow of w' is emitted per step
enum class UpdatePolicy { Nearest, Stochastic, Kahan, KahanStochastic, Master32 };

UpdatePolicy parse_policy(const std::string& name);
std::string policy_name(UpdatePolicy p);
inline bool policy_uses_kahan(UpdatePolicy p) {
  return p == UpdatePolicy::Kahan || p == UpdatePolicy::KahanStochastic;
}

// learning-rate schedule: constant, with optional piecewise-constant
// overrides taking effect at given step indices
struct LrSchedule {
  double base = 0.01;
  std::vector<std::pair<std::uint64_t, double>> breakpoints;  // sorted by step

  double at(std::uint64_t t) const {
    double lr = base;
    for (const auto& [step, value] : breakpoints) {
      if (step > t) break;
      lr = value;
    }
    return lr;
  }
};

struct SgdConfig {
  LrSchedule lr;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

struct AdamWConfig {
  LrSchedule lr;
  double beta1 = 0.9;
  double beta2 = 0.99609375;  // largest bf16 value below 1
  double denom_epsilon = 1e-7;
  double weight_decay = 0.0;
};

// Optimizer state.  Tensors share the weight tensor's format, so 16-bit
// policies keep 16-bit state and Master32 (binary32 weights) keeps 32-bit
// state.  c1/c2 are the multiplicative bias-correction carriers
// (c_{1,t+1} = Q(c_{1,t} * beta1)), stored rounded to the state format.
struct OptimState {
  std::uint64_t t = 0;
  QTensor m;        // momentum / first moment
  QTensor v;        // second moment (AdamW)
  double c1 = 1.0;  // running beta1^t, quantized
  double c2 = 1.0;  // running beta2^t, quantized
  QTensor kahan_c;  // compensation buffer (Kahan policies), else empty
};

OptimState make_optim_state(const QTensor& w, UpdatePolicy policy);

// Per-step observability: how many weight coordinates received a nonzero
// computed update, and how many of those left the stored weight bit-unchanged
// (the update was entirely cancelled by rounding).
struct StepStats {
  std::size_t nonzero_updates = 0;
  std::size_t cancelled_updates = 0;
};

struct StepResult {
  QTensor w;       // updated weights (same format as the input weights)
  QTensor shadow;  // Master32 only: nearest-rounded copy of w in `fmt`
  StepStats stats;
};

// One compensated-summation weight application (additive update u):
//   y  = Q(u - c)        compensate
//   s  = Q(w + y)        accumulate   <- `accumulate_mode` rounds this line
//   t  = Q(s - w)        measure
//   c' = Q(t - y)
// All other lines round nearest.  Returns (s, c').
std::pair<QTensor, QTensor> kahan_apply(
    const QTensor& w, const QTensor& u, const QTensor& c,
    RoundingMode accumulate_mode = RoundingMode::NearestTiesToEven,
    RngStream* rng = nullptr);

// SGD with momentum and coupled weight decay, per listing line:
//   g_eff = Q(grad + d*w)      (skipped when d == 0)
//   m'    = Q(mu*m + g_eff)
//   u     = Q(eta_t * m')      (nearest)
//   w'    = policy application of -u
// `grad` may carry unquantized binary64 values (exact-gradient arms); every
// line rounds its output once in the weight tensor's format.  For 16-bit
// policies w.fmt() must equal fmt; for Master32 the weights are binary32 and
// `fmt` names the shadow format.  Stochastic policies require rng.
StepResult sgd_step(const QTensor& w, std::span<const double> grad,
                    OptimState& state, const SgdConfig& cfg,
                    UpdatePolicy policy, const FloatFormat& fmt,
                    RngStream* rng);

// AdamW with decoupled weight decay, per listing line (scalar lines first):
//   c1' = Q(c1*b1); c2' = Q(c2*b2); bc1 = Q(1-c1'); bc2 = Q(1-c2')
//   m'  = Q(b1*m + (1-b1)*grad)
//   v'  = Q(b2*v + (1-b2)*grad^2)
//   mh  = Q(m'/bc1)
//   vh  = Q(sqrt(v'/bc2))       (division and sqrt fused, one rounding)
//   den = Q(vh + denom_epsilon)
//   rat = Q(mh/den)
//   u1  = Q(eta_t * rat)
//   u2  = Q(Q(eta_t*d) * w)     (skipped when d == 0)
//   u   = Q(u1 + u2)
//   w'  = policy application of -u
// Requires beta2 < 1 (after the caller's hyperparameter quantization).
StepResult adamw_step(const QTensor& w, std::span<const double> grad,
                      OptimState& state, const AdamWConfig& cfg,
                      UpdatePolicy policy, const FloatFormat& fmt,
                      RngStream* rng);

// Nearest-round every scalar hyperparameter to fmt.  Returns the rounded
// config plus human-readable warnings for every value that moved.  Errors
// (ConfigError): beta1 or beta2 rounds to exactly 1 (the message suggests the
// largest representable value below 1); any learning-rate value rounds to 0.
SgdConfig quantize_hparams(const SgdConfig& cfg, const FloatFormat& fmt,
                           std::vector<std::string>* warnings = nullptr);
AdamWConfig quantize_hparams(const AdamWConfig& cfg, const FloatFormat& fmt,
                             std::vector<std::string>* warnings = nullptr);

}  // namespace lprec
