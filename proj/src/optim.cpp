// SPDX-License-Identifier: Apache-2.0
#include "lprec/optim.hpp"

#include <cmath>
#include <sstream>

#include "lprec/errors.hpp"

namespace lprec {

UpdatePolicy parse_policy(const std::string& name) {
  if (name == "nearest") return UpdatePolicy::Nearest;
  if (name == "stochastic") return UpdatePolicy::Stochastic;
  if (name == "kahan") return UpdatePolicy::Kahan;
  if (name == "kahan-stochastic") return UpdatePolicy::KahanStochastic;
  if (name == "master32") return UpdatePolicy::Master32;
  throw ConfigError(
      "unknown update policy '" + name +
      "' (expected nearest|stochastic|kahan|kahan-stochastic|master32)");
}

std::string policy_name(UpdatePolicy p) {
  switch (p) {
    case UpdatePolicy::Nearest: return "nearest";
    case UpdatePolicy::Stochastic: return "stochastic";
    case UpdatePolicy::Kahan: return "kahan";
    case UpdatePolicy::KahanStochastic: return "kahan-stochastic";
    case UpdatePolicy::Master32: return "master32";
  }
  throw ConfigError("unknown update policy value");
}

OptimState make_optim_state(const QTensor& w, UpdatePolicy policy) {
  OptimState s;
  s.m = QTensor::zeros(w.rows(), w.cols(), w.fmt());
  s.v = QTensor::zeros(w.rows(), w.cols(), w.fmt());
  if (policy_uses_kahan(policy))
    s.kahan_c = QTensor::zeros(w.rows(), w.cols(), w.fmt());
  return s;
}

std::pair<QTensor, QTensor> kahan_apply(const QTensor& w, const QTensor& u,
                                        const QTensor& c,
                                        RoundingMode accumulate_mode,
                                        RngStream* rng) {
  if (u.size() != w.size() || c.size() != w.size())
    throw ConfigError("kahan_apply: shape mismatch");
  if (!(u.fmt() == w.fmt()) || !(c.fmt() == w.fmt()))
    throw ConfigError("kahan_apply: format mismatch");
  const FloatFormat& f = w.fmt();

  QTensor s_out = QTensor::zeros(w.rows(), w.cols(), f);
  QTensor c_out = QTensor::zeros(w.rows(), w.cols(), f);
  for (std::size_t j = 0; j < w.size(); ++j) {
    double y = round_nearest(u[j] - c[j], f);
    double s = round_value(w[j] + y, f, accumulate_mode, rng);
    double t = round_nearest(s - w[j], f);
    double cn = round_nearest(t - y, f);
    if (!std::isfinite(s) || !std::isfinite(cn))
      throw NumericError("kahan_apply: non-finite result");
    s_out.set(j, s);
    c_out.set(j, cn);
  }
  return {std::move(s_out), std::move(c_out)};
}

namespace {

// final weight write under the policy; fills stats and (for Master32) shadow
StepResult apply_update(const QTensor& w, const QTensor& u, OptimState& state,
                        UpdatePolicy policy, const FloatFormat& fmt,
                        RngStream* rng) {
  const FloatFormat& wf = w.fmt();
  StepResult out;
  switch (policy) {
    case UpdatePolicy::Nearest:
    case UpdatePolicy::Master32: {
      QTensor wn = QTensor::zeros(w.rows(), w.cols(), wf);
      for (std::size_t j = 0; j < w.size(); ++j) {
        double v = round_nearest(w[j] - u[j], wf);
        if (!std::isfinite(v))
          throw NumericError("weight update: non-finite weight");
        wn.set(j, v);
      }
      out.w = std::move(wn);
      break;
    }
    case UpdatePolicy::Stochastic: {
      if (!rng)
        throw ConfigError("stochastic update policy requires an RNG stream");
      QTensor wn = QTensor::zeros(w.rows(), w.cols(), wf);
      for (std::size_t j = 0; j < w.size(); ++j) {
        double v = round_stochastic(w[j] - u[j], wf, *rng);
        if (!std::isfinite(v))
          throw NumericError("weight update: non-finite weight");
        wn.set(j, v);
      }
      out.w = std::move(wn);
      break;
    }
    case UpdatePolicy::Kahan:
    case UpdatePolicy::KahanStochastic: {
      if (policy == UpdatePolicy::KahanStochastic && !rng)
        throw ConfigError("stochastic update policy requires an RNG stream");
      // additive update is -u; negation is exact
      QTensor nu = QTensor::zeros(w.rows(), w.cols(), wf);
      for (std::size_t j = 0; j < w.size(); ++j) nu.set(j, -u[j]);
      RoundingMode acc = policy == UpdatePolicy::KahanStochastic
                             ? RoundingMode::Stochastic
                             : RoundingMode::NearestTiesToEven;
      auto [wn, cn] = kahan_apply(w, nu, state.kahan_c, acc, rng);
      state.kahan_c = std::move(cn);
      out.w = std::move(wn);
      break;
    }
  }

  for (std::size_t j = 0; j < w.size(); ++j) {
    if (u[j] == 0.0) continue;
    ++out.stats.nonzero_updates;
    if (encode(out.w[j], wf) == encode(w[j], wf)) ++out.stats.cancelled_updates;
  }

  if (policy == UpdatePolicy::Master32) {
    QTensor sh = QTensor::zeros(w.rows(), w.cols(), fmt);
    for (std::size_t j = 0; j < w.size(); ++j)
      sh.set(j, round_nearest(out.w[j], fmt));
    out.shadow = std::move(sh);
  }
  return out;
}

void check_step_args(const QTensor& w, std::span<const double> grad,
                     const OptimState& state, UpdatePolicy policy,
                     const FloatFormat& fmt) {
  if (grad.size() != w.size())
    throw ConfigError("optimizer step: gradient/weight shape mismatch");
  if (state.m.size() != w.size())
    throw ConfigError("optimizer step: state/weight shape mismatch");
  if (policy != UpdatePolicy::Master32 && !(w.fmt() == fmt))
    throw ConfigError("optimizer step: weight format does not match fmt");
  if (policy_uses_kahan(policy) && state.kahan_c.size() != w.size())
    throw ConfigError("optimizer step: Kahan policy without compensation state");
}

}  // namespace

StepResult sgd_step(const QTensor& w, std::span<const double> grad,
                    OptimState& state, const SgdConfig& cfg,
                    UpdatePolicy policy, const FloatFormat& fmt,
                    RngStream* rng) {
  check_step_args(w, grad, state, policy, fmt);
  const FloatFormat& af = w.fmt();  // arithmetic format (fp32 for Master32)
  double eta = cfg.lr.at(state.t);

  QTensor u = QTensor::zeros(w.rows(), w.cols(), af);
  for (std::size_t j = 0; j < w.size(); ++j) {
    double g = grad[j];
    if (cfg.weight_decay != 0.0)
      g = round_nearest(g + cfg.weight_decay * w[j], af);
    double m = round_nearest(cfg.momentum * state.m[j] + g, af);
    state.m.set(j, m);
    double uj = round_nearest(eta * m, af);
    if (!std::isfinite(uj)) throw NumericError("sgd_step: non-finite update");
    u.set(j, uj);
  }

  StepResult out = apply_update(w, u, state, policy, fmt, rng);
  state.t += 1;
  return out;
}

StepResult adamw_step(const QTensor& w, std::span<const double> grad,
                      OptimState& state, const AdamWConfig& cfg,
                      UpdatePolicy policy, const FloatFormat& fmt,
                      RngStream* rng) {
  check_step_args(w, grad, state, policy, fmt);
  if (state.v.size() != w.size())
    throw ConfigError("adamw_step: second-moment state missing");
  if (cfg.beta2 >= 1.0)
    throw ConfigError("adamw_step: beta2 must be < 1 after quantization");
  const FloatFormat& af = w.fmt();
  double eta = cfg.lr.at(state.t);

  // scalar listing lines
  state.c1 = round_nearest(state.c1 * cfg.beta1, af);
  state.c2 = round_nearest(state.c2 * cfg.beta2, af);
  double bc1 = round_nearest(1.0 - state.c1, af);
  double bc2 = round_nearest(1.0 - state.c2, af);
  double eta_d = cfg.weight_decay != 0.0
                     ? round_nearest(eta * cfg.weight_decay, af)
                     : 0.0;

  QTensor u = QTensor::zeros(w.rows(), w.cols(), af);
  for (std::size_t j = 0; j < w.size(); ++j) {
    double g = grad[j];
    double m = round_nearest(cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g, af);
    double v = round_nearest(cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g,
                             af);
    state.m.set(j, m);
    state.v.set(j, v);
    double mh = round_nearest(m / bc1, af);
    double vh = round_nearest(std::sqrt(v / bc2), af);
    double den = round_nearest(vh + cfg.denom_epsilon, af);
    double rat = round_nearest(mh / den, af);
    double uj = round_nearest(eta * rat, af);
    if (eta_d != 0.0) {
      double u2 = round_nearest(eta_d * w[j], af);
      uj = round_nearest(uj + u2, af);
    }
    if (!std::isfinite(uj)) throw NumericError("adamw_step: non-finite update");
    u.set(j, uj);
  }

  StepResult out = apply_update(w, u, state, policy, fmt, rng);
  state.t += 1;
  return out;
}

namespace {

// round one scalar, recording a warning when it moves
double qh(double x, const FloatFormat& fmt, const char* name,
          std::vector<std::string>* warnings) {
  double r = round_nearest(x, fmt);
  if (r != x && warnings) {
    std::ostringstream os;
    os.precision(17);
    os << name << " " << x << " -> " << r << " (" << fmt.name() << ")";
    warnings->push_back(os.str());
  }
  return r;
}

LrSchedule quantize_lr(const LrSchedule& lr, const FloatFormat& fmt,
                       std::vector<std::string>* warnings) {
  LrSchedule out = lr;
  out.base = qh(lr.base, fmt, "lr", warnings);
  if (out.base == 0.0 && lr.base != 0.0)
    throw ConfigError("learning rate " + std::to_string(lr.base) +
                      " rounds to 0 in " + fmt.name());
  for (auto& [step, value] : out.breakpoints) {
    double q = qh(value, fmt, "lr", warnings);
    if (q == 0.0 && value != 0.0)
      throw ConfigError("learning rate " + std::to_string(value) +
                        " rounds to 0 in " + fmt.name());
    value = q;
  }
  return out;
}

void check_beta(double requested, double rounded, const char* name,
                const FloatFormat& fmt) {
  if (rounded >= 1.0) {
    std::ostringstream os;
    os.precision(17);
    os << name << " = " << requested << " rounds to 1 in " << fmt.name()
       << "; largest representable value below 1 is "
       << next_down(1.0, fmt);
    throw ConfigError(os.str());
  }
}

}  // namespace

SgdConfig quantize_hparams(const SgdConfig& cfg, const FloatFormat& fmt,
                           std::vector<std::string>* warnings) {
  SgdConfig out = cfg;
  out.lr = quantize_lr(cfg.lr, fmt, warnings);
  out.momentum = qh(cfg.momentum, fmt, "momentum", warnings);
  out.weight_decay = qh(cfg.weight_decay, fmt, "weight_decay", warnings);
  return out;
}

AdamWConfig quantize_hparams(const AdamWConfig& cfg, const FloatFormat& fmt,
                             std::vector<std::string>* warnings) {
  AdamWConfig out = cfg;
  out.lr = quantize_lr(cfg.lr, fmt, warnings);
  out.beta1 = qh(cfg.beta1, fmt, "beta1", warnings);
  check_beta(cfg.beta1, out.beta1, "beta1", fmt);
  out.beta2 = qh(cfg.beta2, fmt, "beta2", warnings);
  check_beta(cfg.beta2, out.beta2, "beta2", fmt);
  out.denom_epsilon = qh(cfg.denom_epsilon, fmt, "denom_epsilon", warnings);
  out.weight_decay = qh(cfg.weight_decay, fmt, "weight_decay", warnings);
  return out;
}

}  // namespace lprec
