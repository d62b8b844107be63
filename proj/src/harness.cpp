// SPDX-License-Identifier: Apache-2.0
#include "lprec/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "lprec/bounds.hpp"
#include "lprec/errors.hpp"
#include "lprec/formats.hpp"
#include "lprec/lsq.hpp"
#include "lprec/mlp.hpp"
#include "lprec/optim.hpp"
#include "lprec/qtensor.hpp"
#include "lprec/rng.hpp"

namespace lprec {
namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad_config(const std::string& msg) {
  throw ConfigError("config: " + msg);
}

constexpr std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::LsqTheory, "lsq-theory"},
    {ExperimentKind::LsqFigure, "lsq-figure"},
    {ExperimentKind::MlpDemo, "mlp-demo"},
    {ExperimentKind::Cancellation, "cancellation"},
    {ExperimentKind::FormatSweep, "format-sweep"},
    {ExperimentKind::BoundsCheck, "bounds-check"},
};

// ---------------------------------------------------------------------------
// JSON field extraction
// ---------------------------------------------------------------------------

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) bad_config("'" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const std::int64_t x = v.get<std::int64_t>();
    if (x >= 0) return static_cast<std::uint64_t>(x);
  }
  bad_config("'" + key + "' must be a non-negative integer");
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad_config("'" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad_config("'" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::uint64_t> as_u64_array(const json& v, const std::string& key) {
  if (!v.is_array()) bad_config("'" + key + "' must be an array of integers");
  std::vector<std::uint64_t> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_u64(e, key));
  return out;
}

std::vector<std::string> as_string_array(const json& v,
                                         const std::string& key) {
  if (!v.is_array()) bad_config("'" + key + "' must be an array of strings");
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_string(e, key));
  return out;
}

// "" when the value is undefined (NaN/inf), otherwise the %.17g rendering
std::string opt_double(double v) {
  return std::isfinite(v) ? csv_double(v) : std::string();
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

std::filesystem::path ensure_output_dir(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output_path);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    bad_config("cannot create output directory '" + cfg.output_path +
               "': " + ec.message());
  return dir;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

// pull-from-atomic-counter worker pool; results land in caller-owned slots,
// so the merge order never depends on scheduling
template <typename Fn>
void run_tasks(std::size_t count, const Fn& fn) {
  if (count == 0) return;
  const std::size_t workers = worker_count(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t wi = 0; wi < workers; ++wi) {
    pool.emplace_back([&, wi] {
      try {
        for (std::size_t i = next.fetch_add(1); i < count;
             i = next.fetch_add(1))
          fn(i);
      } catch (...) {
        errors[wi] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Arms
// ---------------------------------------------------------------------------

struct ArmSpec {
  std::string name;        // CSV policy column, stream key, file suffix
  FloatFormat weight_fmt;  // weight carrier (binary32 for master arms)
  FloatFormat chain_fmt;   // forward/backward quantization grid
  UpdatePolicy policy = UpdatePolicy::Nearest;
};

ArmSpec make_policy_arm(std::string name, UpdatePolicy p,
                        const FloatFormat& fmt) {
  if (p == UpdatePolicy::Master32)
    return {std::move(name), FloatFormat::fp32(), fmt, p};
  return {std::move(name), fmt, fmt, p};
}

std::vector<ArmSpec> lsq_arms(const ExperimentConfig& cfg) {
  const FloatFormat fmt = parse_format(cfg.format);
  const FloatFormat f32 = FloatFormat::fp32();
  const UpdatePolicy p = parse_policy(cfg.policy);
  if (cfg.kind == ExperimentKind::LsqFigure) {
    return {ArmSpec{"fp32", f32, f32, UpdatePolicy::Nearest},
            ArmSpec{"nearest", fmt, fmt, UpdatePolicy::Nearest},
            ArmSpec{"fwdbwd", f32, fmt, UpdatePolicy::Master32},
            make_policy_arm("policy-" + policy_name(p), p, fmt)};
  }
  return {make_policy_arm(policy_name(p), p, fmt)};
}

LsqInstance make_lsq_instance(const ExperimentConfig& cfg) {
  const bool snap = cfg.noise_std == 0.0 &&
                    (cfg.kind == ExperimentKind::LsqTheory ||
                     cfg.kind == ExperimentKind::Cancellation ||
                     cfg.kind == ExperimentKind::BoundsCheck);
  if (snap)
    return gen_lsq_snapped(cfg.d, cfg.n, cfg.w_lo, cfg.w_hi, cfg.instance_seed,
                           parse_format(cfg.format));
  return gen_lsq(cfg.d, cfg.n, cfg.w_lo, cfg.w_hi, cfg.noise_std,
                 cfg.instance_seed);
}

double effective_lr(const ExperimentConfig& cfg, double value, double L) {
  if (!cfg.lr_relative_to_L) return value;
  if (!(L > 0.0)) bad_config("lr_relative_to_L requires an instance with L > 0");
  return value / L;
}

// arm with its hyperparameters rounded once to the arm's arithmetic format
// (the weight carrier: binary32 for master arms, 16-bit otherwise)
struct PreparedArm {
  ArmSpec spec;
  bool use_adamw = false;
  SgdConfig sgd;
  AdamWConfig adamw;
  std::vector<std::string> warnings;
  double base_lr = 0.0;  // quantized base learning rate actually applied
};

PreparedArm prepare_arm(const ExperimentConfig& cfg, const ArmSpec& spec,
                        double L) {
  PreparedArm out;
  out.spec = spec;
  LrSchedule sched;
  sched.base = effective_lr(cfg, cfg.lr, L);
  for (const auto& [step, value] : cfg.lr_breakpoints)
    sched.breakpoints.emplace_back(step, effective_lr(cfg, value, L));
  out.use_adamw = cfg.optimizer == "adamw";
  if (out.use_adamw) {
    AdamWConfig ac;
    ac.lr = std::move(sched);
    ac.beta1 = cfg.beta1;
    ac.beta2 = cfg.beta2;
    ac.denom_epsilon = cfg.denom_epsilon;
    ac.weight_decay = cfg.weight_decay;
    out.adamw = quantize_hparams(ac, spec.weight_fmt, &out.warnings);
    out.base_lr = out.adamw.lr.base;
  } else {
    SgdConfig sc;
    sc.lr = std::move(sched);
    sc.momentum = cfg.momentum;
    sc.weight_decay = cfg.weight_decay;
    out.sgd = quantize_hparams(sc, spec.weight_fmt, &out.warnings);
    out.base_lr = out.sgd.lr.base;
  }
  return out;
}

// ---------------------------------------------------------------------------
// One (arm, seed) training series
// ---------------------------------------------------------------------------

struct SeriesResult {
  std::string rows;  // rendered CSV rows for this series
  double final_loss = kNaN;
  double final_smoothed = kNaN;
  double final_dist = kNaN;
  bool logged_any = false;
  bool flagged = false;       // aborted on a non-finite value
  double early_mean = kNaN;   // cancellation study: first-10%-of-steps mean
  double late_mean = kNaN;    // cancellation study: last-10%-of-steps mean
};

std::string step_csv_header(bool with_smooth) {
  return with_smooth
             ? "step,loss,loss_smooth,dist_to_opt,cancel_frac,lr,policy,seed,"
               "flag\n"
             : "step,loss,dist_to_opt,cancel_frac,lr,policy,seed,flag\n";
}

void append_row(std::string& out, std::uint64_t step, const std::string& loss,
                bool with_smooth, const std::string& smooth,
                const std::string& dist, const std::string& cancel, double lr,
                const std::string& policy, std::uint64_t seed,
                const std::string& flag) {
  out += std::to_string(step);
  out += ',';
  out += loss;
  out += ',';
  if (with_smooth) {
    out += smooth;
    out += ',';
  }
  out += dist;
  out += ',';
  out += cancel;
  out += ',';
  out += csv_double(lr);
  out += ',';
  out += policy;
  out += ',';
  out += std::to_string(seed);
  out += ',';
  out += flag;
  out += '\n';
}

// trailing-window smoothing state (a view over the logged losses; raw values
// stay in the loss column untouched)
class TrailingMean {
 public:
  explicit TrailingMean(std::size_t window) : window_(window) {}
  double push(double v) {
    values_.push_back(v);
    sum_ += v;
    if (values_.size() > window_) {
      sum_ -= values_.front();
      values_.pop_front();
    }
    return sum_ / static_cast<double>(values_.size());
  }

 private:
  std::size_t window_;
  std::deque<double> values_;
  double sum_ = 0.0;
};

QTensor lsq_start_point(const ExperimentConfig& cfg, const LsqInstance& inst,
                        const FloatFormat& wfmt) {
  if (cfg.w0_mode == "offset")
    return offset_start_point(inst, cfg.w0_distance, wfmt, cfg.instance_seed);
  return QTensor::zeros_vec(inst.d, wfmt);
}

SeriesResult run_lsq_series(const ExperimentConfig& cfg,
                            const LsqInstance& inst, const PreparedArm& arm,
                            std::uint64_t seed, bool collect_windows) {
  SeriesResult res;
  const ArmSpec& spec = arm.spec;
  const LsqView view(inst, spec.chain_fmt);
  QTensor w = lsq_start_point(cfg, inst, spec.weight_fmt);
  OptimState state = make_optim_state(w, spec.policy);
  RngStream samples(seed, stream_id_from("sample-index"));
  RngStream update_rng(seed, stream_id_from("arm/" + spec.name + "/w"));
  // sgd_step/adamw_step take the shadow format for master arms and the
  // weight format otherwise
  const FloatFormat& step_fmt = spec.policy == UpdatePolicy::Master32
                                    ? spec.chain_fmt
                                    : spec.weight_fmt;
  const LrSchedule& sched = arm.use_adamw ? arm.adamw.lr : arm.sgd.lr;
  const bool with_smooth = cfg.smoothing_window > 0;
  TrailingMean smoother(cfg.smoothing_window);

  // cancellation trend windows: first and last 10% of steps, over every
  // step with a defined cancel fraction (not just the logged ones)
  const std::uint64_t early_end = (cfg.steps + 9) / 10;
  const std::uint64_t late_begin = cfg.steps - cfg.steps / 10 + 1;
  double early_sum = 0.0, late_sum = 0.0;
  std::size_t early_n = 0, late_n = 0;

  std::uint64_t t = 0;
  try {
    for (t = 1; t <= cfg.steps; ++t) {
      const double eta = sched.at(state.t);
      const std::size_t i =
          static_cast<std::size_t>(samples.uniform_below(inst.n));
      const QTensor grad = lsq_grad_quantized(
          w, view, i, RoundingMode::NearestTiesToEven, nullptr);
      StepResult sr = arm.use_adamw
                          ? adamw_step(w, grad.span(), state, arm.adamw,
                                       spec.policy, step_fmt, &update_rng)
                          : sgd_step(w, grad.span(), state, arm.sgd,
                                     spec.policy, step_fmt, &update_rng);
      w = std::move(sr.w);
      const bool have_cancel = sr.stats.nonzero_updates > 0;
      const double cancel =
          have_cancel ? static_cast<double>(sr.stats.cancelled_updates) /
                            static_cast<double>(sr.stats.nonzero_updates)
                      : kNaN;
      if (collect_windows && have_cancel) {
        if (t <= early_end) {
          early_sum += cancel;
          ++early_n;
        }
        if (t >= late_begin) {
          late_sum += cancel;
          ++late_n;
        }
      }
      if (t % cfg.log_every != 0) continue;
      const double loss = lsq_full_loss(w.span(), view);
      if (!std::isfinite(loss)) {
        append_row(res.rows, t, csv_double(loss), with_smooth, "", "", "", eta,
                   spec.name, seed, "non-finite");
        res.flagged = true;
        break;
      }
      const double dist = std::sqrt(dist2_to_optimum(w.span(), inst));
      std::string smooth_str;
      if (with_smooth) {
        res.final_smoothed = smoother.push(loss);
        smooth_str = csv_double(res.final_smoothed);
      }
      append_row(res.rows, t, csv_double(loss), with_smooth, smooth_str,
                 csv_double(dist),
                 have_cancel ? csv_double(cancel) : std::string(), eta,
                 spec.name, seed, "");
      res.final_loss = loss;
      res.final_dist = dist;
      res.logged_any = true;
    }
  } catch (const NumericError&) {
    append_row(res.rows, t, "", with_smooth, "", "", "", sched.at(state.t),
               spec.name, seed, "non-finite");
    res.flagged = true;
  }
  if (collect_windows) {
    if (early_n > 0) res.early_mean = early_sum / static_cast<double>(early_n);
    if (late_n > 0) res.late_mean = late_sum / static_cast<double>(late_n);
  }
  return res;
}

ArmSummary summarize_arm(const PreparedArm& arm,
                         const std::vector<SeriesResult>& series,
                         std::string file) {
  ArmSummary s;
  s.name = arm.spec.name;
  s.weight_format = arm.spec.weight_fmt.name();
  s.file = std::move(file);
  s.warnings = arm.warnings;
  double loss = 0.0, smooth = 0.0, dist = 0.0;
  std::size_t n_loss = 0, n_smooth = 0, n_dist = 0;
  for (const SeriesResult& r : series) {
    s.flagged = s.flagged || r.flagged;
    if (r.flagged || !r.logged_any) continue;
    if (std::isfinite(r.final_loss)) {
      loss += r.final_loss;
      ++n_loss;
    }
    if (std::isfinite(r.final_smoothed)) {
      smooth += r.final_smoothed;
      ++n_smooth;
    }
    if (std::isfinite(r.final_dist)) {
      dist += r.final_dist;
      ++n_dist;
    }
  }
  s.final_loss = n_loss ? loss / static_cast<double>(n_loss) : kNaN;
  s.final_smoothed = n_smooth ? smooth / static_cast<double>(n_smooth) : kNaN;
  s.final_dist = n_dist ? dist / static_cast<double>(n_dist) : kNaN;
  return s;
}

// train the given arms on one shared instance, one CSV per arm
RunReport run_lsq_arms(const ExperimentConfig& cfg, const LsqInstance& inst,
                       const std::vector<ArmSpec>& specs, bool collect_windows,
                       std::vector<std::vector<SeriesResult>>* series_out) {
  const std::filesystem::path dir = ensure_output_dir(cfg);
  std::vector<PreparedArm> arms;
  arms.reserve(specs.size());
  for (const ArmSpec& s : specs)
    arms.push_back(prepare_arm(cfg, s, inst.constants.L));

  const std::size_t ns = cfg.seeds.size();
  std::vector<std::vector<SeriesResult>> series(
      arms.size(), std::vector<SeriesResult>(ns));
  run_tasks(arms.size() * ns, [&](std::size_t idx) {
    const std::size_t ai = idx / ns;
    const std::size_t si = idx % ns;
    series[ai][si] =
        run_lsq_series(cfg, inst, arms[ai], cfg.seeds[si], collect_windows);
  });

  RunReport rep;
  rep.kind = cfg.kind;
  const bool with_smooth = cfg.smoothing_window > 0;
  for (std::size_t ai = 0; ai < arms.size(); ++ai) {
    std::string content = step_csv_header(with_smooth);
    for (const SeriesResult& r : series[ai]) content += r.rows;
    const std::filesystem::path path =
        dir / (kind_name(cfg.kind) + "_" + arms[ai].spec.name + ".csv");
    write_file(path, content);
    rep.files.push_back(path.string());
    rep.arms.push_back(summarize_arm(arms[ai], series[ai], path.string()));
    rep.any_flagged = rep.any_flagged || rep.arms.back().flagged;
  }
  if (series_out) *series_out = std::move(series);
  return rep;
}

// ---------------------------------------------------------------------------
// MLP series
// ---------------------------------------------------------------------------

SeriesResult run_mlp_series(const ExperimentConfig& cfg,
                            const MlpDataset& data, const PreparedArm& arm,
                            const std::array<UpdatePolicy, 4>& tensor_policies,
                            std::uint64_t seed) {
  SeriesResult res;
  const FloatFormat& fmt = arm.spec.weight_fmt;
  MlpParams params = mlp_init_params(data.spec, fmt, seed);
  params.w1.policy = tensor_policies[0];
  params.b1.policy = tensor_policies[1];
  params.w2.policy = tensor_policies[2];
  params.b2.policy = tensor_policies[3];
  QuantPolicy qp;
  qp.round_forward_backward = cfg.round_forward_backward;

  std::array<MlpParam*, 4> tensors = {&params.w1, &params.b1, &params.w2,
                                      &params.b2};
  std::array<OptimState, 4> states = {
      make_optim_state(params.w1.value, params.w1.policy),
      make_optim_state(params.b1.value, params.b1.policy),
      make_optim_state(params.w2.value, params.w2.policy),
      make_optim_state(params.b2.value, params.b2.policy)};
  RngStream samples(seed, stream_id_from("sample-index"));
  const std::array<const char*, 4> tensor_names = {"w1", "b1", "w2", "b2"};
  std::vector<RngStream> update_rngs;
  update_rngs.reserve(4);
  for (const char* tn : tensor_names)
    update_rngs.emplace_back(
        seed, stream_id_from("arm/" + arm.spec.name + "/" + tn));

  const LrSchedule& sched = arm.use_adamw ? arm.adamw.lr : arm.sgd.lr;
  const bool with_smooth = cfg.smoothing_window > 0;
  TrailingMean smoother(cfg.smoothing_window);

  std::uint64_t t = 0;
  try {
    for (t = 1; t <= cfg.steps; ++t) {
      const double eta = sched.at(states[0].t);
      const std::size_t i =
          static_cast<std::size_t>(samples.uniform_below(data.n));
      const MlpBatch batch = data.sample(i);
      const MlpResult r = mlp_forward_backward(
          params, batch, fmt, RoundingMode::NearestTiesToEven, qp, nullptr);
      const std::array<const QTensor*, 4> grads = {&r.grads.w1, &r.grads.b1,
                                                   &r.grads.w2, &r.grads.b2};
      StepStats agg;
      for (std::size_t k = 0; k < 4; ++k) {
        MlpParam& p = *tensors[k];
        StepResult sr =
            arm.use_adamw
                ? adamw_step(p.value, grads[k]->span(), states[k], arm.adamw,
                             p.policy, fmt, &update_rngs[k])
                : sgd_step(p.value, grads[k]->span(), states[k], arm.sgd,
                           p.policy, fmt, &update_rngs[k]);
        p.value = std::move(sr.w);
        agg.nonzero_updates += sr.stats.nonzero_updates;
        agg.cancelled_updates += sr.stats.cancelled_updates;
      }
      if (t % cfg.log_every != 0) continue;
      const double loss = r.loss;  // batch loss at step t (pre-update params)
      const bool have_cancel = agg.nonzero_updates > 0;
      const double cancel =
          have_cancel ? static_cast<double>(agg.cancelled_updates) /
                            static_cast<double>(agg.nonzero_updates)
                      : kNaN;
      std::string smooth_str;
      if (with_smooth) {
        res.final_smoothed = smoother.push(loss);
        smooth_str = csv_double(res.final_smoothed);
      }
      append_row(res.rows, t, csv_double(loss), with_smooth, smooth_str, "",
                 have_cancel ? csv_double(cancel) : std::string(), eta,
                 arm.spec.name, seed, "");
      res.final_loss = loss;
      res.logged_any = true;
    }
  } catch (const NumericError&) {
    append_row(res.rows, t, "", with_smooth, "", "", "", sched.at(states[0].t),
               arm.spec.name, seed, "non-finite");
    res.flagged = true;
  }
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

ExperimentKind parse_kind(const std::string& name) {
  for (const auto& [kind, kname] : kKindNames)
    if (name == kname) return kind;
  std::string known;
  for (const auto& [kind, kname] : kKindNames) {
    if (!known.empty()) known += '|';
    known += kname;
  }
  bad_config("unknown kind '" + name + "' (expected " + known + ")");
}

std::string kind_name(ExperimentKind k) {
  for (const auto& [kind, kname] : kKindNames)
    if (kind == k) return kname;
  throw ConfigError("unknown experiment kind value");
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t worker_count(std::size_t tasks) {
  const std::size_t cap = std::max<std::size_t>(tasks, 1);
  if (const char* env = std::getenv("LPREC_THREADS")) {
    const std::string s(env);
    const bool digits =
        !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
    errno = 0;
    char* end = nullptr;
    const unsigned long long v =
        digits ? std::strtoull(s.c_str(), &end, 10) : 0ull;
    if (!digits || errno != 0 || v == 0)
      throw ConfigError("LPREC_THREADS must be a positive integer, got '" + s +
                        "'");
    return std::min<std::size_t>(static_cast<std::size_t>(v), cap);
  }
  unsigned hc = std::thread::hardware_concurrency();
  if (hc == 0) hc = 1;
  return std::min<std::size_t>(hc, cap);
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad_config(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_config("top-level value must be an object");

  ExperimentConfig cfg;
  bool have_kind = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") {
      cfg.schema_version = static_cast<int>(as_u64(value, key));
    } else if (key == "kind") {
      cfg.kind = parse_kind(as_string(value, key));
      have_kind = true;
    } else if (key == "format") {
      cfg.format = as_string(value, key);
    } else if (key == "policy") {
      cfg.policy = as_string(value, key);
    } else if (key == "tensor_policies") {
      if (!value.is_object())
        bad_config("'tensor_policies' must be an object of tensor -> policy");
      cfg.tensor_policies.clear();
      for (const auto& [tname, pol] : value.items())
        cfg.tensor_policies[tname] = as_string(pol, key + "." + tname);
    } else if (key == "optimizer") {
      cfg.optimizer = as_string(value, key);
    } else if (key == "lr") {
      cfg.lr = as_number(value, key);
    } else if (key == "lr_relative_to_L") {
      cfg.lr_relative_to_L = as_bool(value, key);
    } else if (key == "momentum") {
      cfg.momentum = as_number(value, key);
    } else if (key == "weight_decay") {
      cfg.weight_decay = as_number(value, key);
    } else if (key == "beta1") {
      cfg.beta1 = as_number(value, key);
    } else if (key == "beta2") {
      cfg.beta2 = as_number(value, key);
    } else if (key == "denom_epsilon") {
      cfg.denom_epsilon = as_number(value, key);
    } else if (key == "lr_breakpoints") {
      if (!value.is_array())
        bad_config("'lr_breakpoints' must be an array of [step, lr] pairs");
      cfg.lr_breakpoints.clear();
      for (const auto& e : value) {
        if (!e.is_array() || e.size() != 2)
          bad_config("'lr_breakpoints' entries must be [step, lr] pairs");
        cfg.lr_breakpoints.emplace_back(as_u64(e[0], "lr_breakpoints.step"),
                                        as_number(e[1], "lr_breakpoints.lr"));
      }
    } else if (key == "steps") {
      cfg.steps = as_u64(value, key);
    } else if (key == "log_every") {
      cfg.log_every = as_u64(value, key);
    } else if (key == "smoothing_window") {
      cfg.smoothing_window = as_u64(value, key);
    } else if (key == "seeds") {
      cfg.seeds = as_u64_array(value, key);
    } else if (key == "instance_seed") {
      cfg.instance_seed = as_u64(value, key);
    } else if (key == "d") {
      cfg.d = static_cast<std::size_t>(as_u64(value, key));
    } else if (key == "n") {
      cfg.n = static_cast<std::size_t>(as_u64(value, key));
    } else if (key == "w_range") {
      if (!value.is_array() || value.size() != 2)
        bad_config("'w_range' must be a [lo, hi] pair");
      cfg.w_lo = as_number(value[0], "w_range.lo");
      cfg.w_hi = as_number(value[1], "w_range.hi");
    } else if (key == "noise_std") {
      cfg.noise_std = as_number(value, key);
    } else if (key == "round_forward_backward") {
      cfg.round_forward_backward = as_bool(value, key);
    } else if (key == "w0_mode") {
      cfg.w0_mode = as_string(value, key);
    } else if (key == "w0_distance") {
      cfg.w0_distance = as_number(value, key);
    } else if (key == "output_path") {
      cfg.output_path = as_string(value, key);
    } else if (key == "sweep_formats") {
      cfg.sweep_formats = as_string_array(value, key);
    } else if (key == "sweep_policies") {
      cfg.sweep_policies = as_string_array(value, key);
    } else if (key == "sufficiency_probes") {
      cfg.sufficiency_probes = static_cast<std::size_t>(as_u64(value, key));
    } else if (key == "sufficiency_formats") {
      cfg.sufficiency_formats = as_string_array(value, key);
    } else if (key == "sufficiency_alpha") {
      cfg.sufficiency_alpha = as_number(value, key);
    } else if (key == "checkpoints") {
      cfg.checkpoints = as_u64_array(value, key);
    } else if (key == "convergence_n") {
      cfg.convergence_n = static_cast<std::size_t>(as_u64(value, key));
    } else if (key == "hidden_dim") {
      cfg.hidden_dim = static_cast<std::size_t>(as_u64(value, key));
    } else {
      bad_config("unknown key '" + key + "'");
    }
  }
  if (!have_kind) bad_config("missing required key 'kind'");
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_json(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.schema_version != 1)
    bad_config("unsupported schema_version " +
               std::to_string(cfg.schema_version) + " (this build reads 1)");
  parse_format(cfg.format);
  parse_policy(cfg.policy);
  if (cfg.optimizer != "sgd" && cfg.optimizer != "adamw")
    bad_config("optimizer must be 'sgd' or 'adamw', got '" + cfg.optimizer +
               "'");
  for (const auto& [tname, pname] : cfg.tensor_policies) {
    if (tname != "w1" && tname != "b1" && tname != "w2" && tname != "b2")
      bad_config("tensor_policies key must be one of w1|b1|w2|b2, got '" +
                 tname + "'");
    parse_policy(pname);
  }
  if (!(cfg.lr > 0.0)) bad_config("lr must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    bad_config("momentum must be in [0, 1)");
  if (cfg.weight_decay < 0.0) bad_config("weight_decay must be >= 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0)
    bad_config("beta1 must be in [0, 1)");
  if (cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    bad_config("beta2 must be in [0, 1)");
  if (!(cfg.denom_epsilon > 0.0)) bad_config("denom_epsilon must be positive");
  std::uint64_t prev_step = 0;
  bool first_bp = true;
  for (const auto& [step, value] : cfg.lr_breakpoints) {
    if (!first_bp && step <= prev_step)
      bad_config("lr_breakpoints steps must be strictly increasing");
    if (!(value > 0.0)) bad_config("lr_breakpoints values must be positive");
    prev_step = step;
    first_bp = false;
  }
  if (cfg.log_every == 0) bad_config("log_every must be at least 1");
  if (cfg.seeds.empty()) bad_config("seeds must be non-empty");
  if (cfg.d == 0) bad_config("d must be at least 1");
  if (cfg.n < cfg.d) bad_config("n must be at least d");
  if (!(cfg.w_lo < cfg.w_hi)) bad_config("w_range must satisfy lo < hi");
  if (cfg.noise_std < 0.0) bad_config("noise_std must be >= 0");
  if (cfg.w0_mode != "zero" && cfg.w0_mode != "offset")
    bad_config("w0_mode must be 'zero' or 'offset', got '" + cfg.w0_mode +
               "'");
  if (cfg.w0_distance < 0.0) bad_config("w0_distance must be >= 0");
  if (cfg.output_path.empty()) bad_config("output_path must be non-empty");
  for (const std::string& f : cfg.sweep_formats) parse_format(f);
  for (const std::string& p : cfg.sweep_policies) parse_policy(p);
  for (const std::string& f : cfg.sufficiency_formats) parse_format(f);
  if (!(cfg.sufficiency_alpha > 0.0))
    bad_config("sufficiency_alpha must be positive");
  if (cfg.hidden_dim == 0) bad_config("hidden_dim must be at least 1");

  switch (cfg.kind) {
    case ExperimentKind::FormatSweep:
      if (cfg.sweep_formats.empty() || cfg.sweep_policies.empty())
        bad_config("format-sweep requires non-empty sweep_formats and "
                   "sweep_policies");
      break;
    case ExperimentKind::BoundsCheck:
      if (cfg.noise_std != 0.0)
        bad_config("bounds-check requires noise_std = 0 (the bounds assume "
                   "exact interpolation)");
      if (!(cfg.w0_distance > 0.0))
        bad_config("bounds-check requires w0_distance > 0");
      if (cfg.sufficiency_formats.empty())
        bad_config("bounds-check requires non-empty sufficiency_formats");
      if (cfg.sufficiency_probes == 0)
        bad_config("sufficiency_probes must be at least 1");
      if (cfg.checkpoints.empty())
        bad_config("bounds-check requires non-empty checkpoints");
      for (std::uint64_t t : cfg.checkpoints)
        if (t == 0 || t > cfg.steps)
          bad_config("checkpoints must lie in [1, steps]");
      if (cfg.convergence_n < cfg.d)
        bad_config("convergence_n must be at least d");
      break;
    case ExperimentKind::MlpDemo: {
      if (cfg.lr_relative_to_L)
        bad_config("lr_relative_to_L is only defined for least-squares kinds");
      if (parse_policy(cfg.policy) == UpdatePolicy::Master32)
        bad_config("mlp-demo keeps 16-bit weights; the master32 policy is "
                   "not supported here");
      for (const auto& [tname, pname] : cfg.tensor_policies)
        if (parse_policy(pname) == UpdatePolicy::Master32)
          bad_config("mlp-demo keeps 16-bit weights; per-tensor master32 is "
                     "not supported");
      break;
    }
    default:
      break;
  }
}

RunReport run_lsq_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::LsqTheory &&
      cfg.kind != ExperimentKind::LsqFigure)
    bad_config("run_lsq_experiment requires kind lsq-theory or lsq-figure");
  const LsqInstance inst = make_lsq_instance(cfg);
  return run_lsq_arms(cfg, inst, lsq_arms(cfg), false, nullptr);
}

RunReport run_cancellation_study(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Cancellation)
    bad_config("run_cancellation_study requires kind cancellation");
  if (parse_policy(cfg.policy) != UpdatePolicy::Nearest)
    throw ConfigError(
        "cancellation study is defined for the nearest update policy only");
  const LsqInstance inst = make_lsq_instance(cfg);
  std::vector<std::vector<SeriesResult>> series;
  RunReport rep = run_lsq_arms(cfg, inst, lsq_arms(cfg), true, &series);

  std::string content = "seed,early_mean,late_mean\n";
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const SeriesResult& r = series.at(0).at(si);
    content += std::to_string(cfg.seeds[si]);
    content += ',';
    content += opt_double(r.early_mean);
    content += ',';
    content += opt_double(r.late_mean);
    content += '\n';
  }
  const std::filesystem::path path = std::filesystem::path(cfg.output_path) /
                                     (kind_name(cfg.kind) + "_summary.csv");
  write_file(path, content);
  rep.files.push_back(path.string());
  return rep;
}

RunReport run_format_sweep(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::FormatSweep)
    bad_config("run_format_sweep requires kind format-sweep");
  const LsqInstance inst = make_lsq_instance(cfg);

  struct SweepPair {
    std::string format_name;
    std::string policy_str;
    PreparedArm arm;
    bool config_error = false;
    std::string error;
    double radius = kNaN;
  };
  std::vector<SweepPair> pairs;
  for (const std::string& fname : cfg.sweep_formats) {
    for (const std::string& pname : cfg.sweep_policies) {
      SweepPair pr;
      const FloatFormat f = parse_format(fname);
      const UpdatePolicy p = parse_policy(pname);
      pr.format_name = f.name();
      pr.policy_str = policy_name(p);
      const ArmSpec spec = make_policy_arm("policy-" + policy_name(p), p, f);
      try {
        pr.arm = prepare_arm(cfg, spec, inst.constants.L);
        CancellationParams cp;
        cp.eps = spec.weight_fmt.machine_epsilon();
        cp.alpha = pr.arm.base_lr;
        cp.L = inst.constants.L;
        cp.w_star = inst.w_star;
        pr.radius = cancellation_radius(cp);
      } catch (const ConfigError& e) {
        pr.config_error = true;
        pr.error = e.what();
        pr.arm.spec = spec;
      }
      pairs.push_back(std::move(pr));
    }
  }

  const std::size_t ns = cfg.seeds.size();
  std::vector<std::vector<SeriesResult>> series(pairs.size(),
                                                std::vector<SeriesResult>(ns));
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    if (pairs[pi].config_error) continue;
    for (std::size_t si = 0; si < ns; ++si) tasks.emplace_back(pi, si);
  }
  run_tasks(tasks.size(), [&](std::size_t k) {
    const auto& tk = tasks[k];
    series[tk.first][tk.second] = run_lsq_series(
        cfg, inst, pairs[tk.first].arm, cfg.seeds[tk.second], false);
  });

  RunReport rep;
  rep.kind = cfg.kind;
  std::string content =
      "format,policy,final_loss,final_smoothed,final_dist,radius,flag\n";
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const SweepPair& pr = pairs[pi];
    ArmSummary s = summarize_arm(pr.arm, series[pi], "");
    s.name = pr.format_name + "/" + pr.policy_str;
    if (pr.config_error) {
      s.flagged = true;
      s.warnings.push_back(pr.error);
    }
    content += pr.format_name;
    content += ',';
    content += pr.policy_str;
    content += ',';
    content += opt_double(s.final_loss);
    content += ',';
    content += opt_double(s.final_smoothed);
    content += ',';
    content += opt_double(s.final_dist);
    content += ',';
    content += opt_double(pr.radius);
    content += ',';
    content += pr.config_error ? "config-error" : (s.flagged ? "non-finite" : "");
    content += '\n';
    rep.any_flagged = rep.any_flagged || s.flagged;
    rep.arms.push_back(std::move(s));
  }
  const std::filesystem::path path =
      ensure_output_dir(cfg) / (kind_name(cfg.kind) + "_summary.csv");
  write_file(path, content);
  rep.files.push_back(path.string());
  return rep;
}

RunReport run_bounds_check(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::BoundsCheck)
    bad_config("run_bounds_check requires kind bounds-check");
  const std::filesystem::path dir = ensure_output_dir(cfg);
  const std::string header =
      "probe_id,distance,radius,predicted,observed_cancelled,bound_value,"
      "measured_value\n";
  RunReport rep;
  rep.kind = cfg.kind;

  // cancellation-radius sufficiency, one snapped instance per format
  std::vector<SufficiencyReport> sreps(cfg.sufficiency_formats.size());
  run_tasks(cfg.sufficiency_formats.size(), [&](std::size_t k) {
    const FloatFormat f = parse_format(cfg.sufficiency_formats[k]);
    const LsqInstance inst = gen_lsq_snapped(cfg.d, cfg.n, cfg.w_lo, cfg.w_hi,
                                             cfg.instance_seed, f);
    const double alpha = cfg.sufficiency_alpha / inst.constants.L;
    sreps[k] = check_cancellation_sufficiency(inst, alpha, f,
                                              cfg.sufficiency_probes,
                                              cfg.instance_seed);
  });
  for (std::size_t k = 0; k < sreps.size(); ++k) {
    const SufficiencyReport& r = sreps[k];
    const std::string fname = parse_format(cfg.sufficiency_formats[k]).name();
    std::string content = header;
    for (const SufficiencyProbe& p : r.probes) {
      content += std::to_string(p.id);
      content += ',';
      content += csv_double(p.distance);
      content += ',';
      content += csv_double(p.radius);
      content += ',';
      content += p.predicted ? "1" : "0";
      content += ',';
      content += p.cancelled_all_samples ? "1" : "0";
      content += ',';
      content += csv_double(p.radius);
      content += ',';
      content += csv_double(p.distance);
      content += '\n';
    }
    const std::filesystem::path path =
        dir / (kind_name(cfg.kind) + "_sufficiency_" + fname + ".csv");
    write_file(path, content);
    rep.files.push_back(path.string());
    ArmSummary s;
    s.name = "sufficiency-" + fname;
    s.weight_format = fname;
    s.file = path.string();
    s.final_loss = s.final_smoothed = s.final_dist = kNaN;
    s.flagged = r.counterexamples > 0;
    s.warnings.push_back("radius " + csv_double(r.radius) + ", " +
                         std::to_string(r.inside_pair_checks) +
                         " in-radius update checks, " +
                         std::to_string(r.counterexamples) +
                         " counterexamples");
    rep.any_flagged = rep.any_flagged || s.flagged;
    rep.arms.push_back(std::move(s));
  }

  // halting lower bound along nearest-rounded trajectories, one row per seed
  const FloatFormat fmt = parse_format(cfg.format);
  const LsqInstance traj_inst = make_lsq_instance(cfg);
  const double traj_alpha = effective_lr(cfg, cfg.lr, traj_inst.constants.L);
  std::vector<TrajectoryReport> treps(cfg.seeds.size());
  run_tasks(cfg.seeds.size(), [&](std::size_t k) {
    treps[k] = run_halting_check(traj_inst, traj_alpha, fmt,
                                 static_cast<std::size_t>(cfg.steps),
                                 cfg.w0_distance, cfg.seeds[k]);
  });
  {
    std::string content = header;
    bool violated = false;
    double min_measured = std::numeric_limits<double>::infinity();
    double mean_final = 0.0;
    for (std::size_t k = 0; k < treps.size(); ++k) {
      const TrajectoryReport& r = treps[k];
      violated = violated || r.violated;
      min_measured = std::min(min_measured, r.min_distance);
      mean_final += r.final_distance;
      content += std::to_string(cfg.seeds[k]);
      content += ',';
      content += csv_double(r.final_distance);
      content += ",,1,,";
      content += csv_double(r.lower_bound);
      content += ',';
      content += csv_double(r.min_distance);
      content += '\n';
    }
    mean_final /= static_cast<double>(treps.size());
    const std::filesystem::path path =
        dir / (kind_name(cfg.kind) + "_trajectory.csv");
    write_file(path, content);
    rep.files.push_back(path.string());
    ArmSummary s;
    s.name = "trajectory";
    s.weight_format = fmt.name();
    s.file = path.string();
    s.final_loss = s.final_smoothed = kNaN;
    s.final_dist = mean_final;
    s.flagged = violated;
    s.warnings.push_back("lower bound " + csv_double(treps[0].lower_bound) +
                         ", min distance over seeds " +
                         csv_double(min_measured) +
                         (violated ? ", VIOLATED" : ", no violations"));
    rep.any_flagged = rep.any_flagged || s.flagged;
    rep.arms.push_back(std::move(s));
  }

  // contraction upper bound for the binary32-master arm, one row per
  // checkpoint (Monte Carlo mean over cfg.seeds)
  {
    const LsqInstance conv_inst = gen_lsq_snapped(
        cfg.d, cfg.convergence_n, cfg.w_lo, cfg.w_hi, cfg.instance_seed, fmt);
    const double conv_alpha = effective_lr(cfg, cfg.lr, conv_inst.constants.L);
    const ConvergenceReport crep = run_convergence_check(
        conv_inst, conv_alpha, fmt, static_cast<std::size_t>(cfg.steps),
        cfg.seeds, cfg.checkpoints, cfg.w0_distance, cfg.instance_seed);
    std::string content = header;
    for (const ConvergenceCheckpointResult& c : crep.checkpoints) {
      content += std::to_string(c.t);
      content += ",,,";
      content += c.vacuous ? "0" : "1";
      content += ",,";
      content += csv_double(c.bound);
      content += ',';
      content += csv_double(c.mean_dist_sq);
      content += '\n';
    }
    const std::filesystem::path path =
        dir / (kind_name(cfg.kind) + "_convergence.csv");
    write_file(path, content);
    rep.files.push_back(path.string());
    ArmSummary s;
    s.name = "convergence";
    s.weight_format = fmt.name();
    s.file = path.string();
    s.final_loss = s.final_smoothed = kNaN;
    s.final_dist = crep.final_mean_distance;
    s.flagged = !crep.all_within;
    s.warnings.push_back(
        "d0_sq " + csv_double(crep.d0_sq) + ", final mean distance " +
        csv_double(crep.final_mean_distance) +
        (crep.all_within ? ", all checkpoints within bound"
                         : ", BOUND EXCEEDED"));
    rep.any_flagged = rep.any_flagged || s.flagged;
    rep.arms.push_back(std::move(s));
  }
  return rep;
}

RunReport run_mlp_demo(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::MlpDemo)
    bad_config("run_mlp_demo requires kind mlp-demo");
  const FloatFormat fmt = parse_format(cfg.format);
  const UpdatePolicy base = parse_policy(cfg.policy);
  auto tensor_policy = [&](const char* tname) {
    const auto it = cfg.tensor_policies.find(tname);
    return it == cfg.tensor_policies.end() ? base : parse_policy(it->second);
  };
  const std::array<UpdatePolicy, 4> policies = {
      tensor_policy("w1"), tensor_policy("b1"), tensor_policy("w2"),
      tensor_policy("b2")};

  const MlpSpec spec{cfg.d, cfg.hidden_dim};
  const MlpDataset data = gen_mlp_data(spec, cfg.n, cfg.instance_seed, fmt);
  const ArmSpec arm_spec{policy_name(base), fmt, fmt, base};
  const PreparedArm arm = prepare_arm(cfg, arm_spec, 0.0);

  const std::size_t ns = cfg.seeds.size();
  std::vector<SeriesResult> series(ns);
  run_tasks(ns, [&](std::size_t si) {
    series[si] = run_mlp_series(cfg, data, arm, policies, cfg.seeds[si]);
  });

  RunReport rep;
  rep.kind = cfg.kind;
  std::string content = step_csv_header(cfg.smoothing_window > 0);
  for (const SeriesResult& r : series) content += r.rows;
  const std::filesystem::path path =
      ensure_output_dir(cfg) /
      (kind_name(cfg.kind) + "_" + arm_spec.name + ".csv");
  write_file(path, content);
  rep.files.push_back(path.string());
  rep.arms.push_back(summarize_arm(arm, series, path.string()));
  rep.any_flagged = rep.arms.back().flagged;
  return rep;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::LsqTheory:
    case ExperimentKind::LsqFigure:
      return run_lsq_experiment(cfg);
    case ExperimentKind::MlpDemo:
      return run_mlp_demo(cfg);
    case ExperimentKind::Cancellation:
      return run_cancellation_study(cfg);
    case ExperimentKind::FormatSweep:
      return run_format_sweep(cfg);
    case ExperimentKind::BoundsCheck:
      return run_bounds_check(cfg);
  }
  throw ConfigError("unknown experiment kind value");
}

}  // namespace lprec
