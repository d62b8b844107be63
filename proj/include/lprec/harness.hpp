// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lprec {

// Experiment families driven by the CLI.
//   lsq-theory    single-arm least-squares run (halting / saturation studies)
//   lsq-figure    four comparison arms on one least-squares instance:
//                 "fp32" (binary32 weights and operators), "nearest" (16-bit
//                 weights, nearest-rounded updates), "fwdbwd" (binary32
//                 master weights, 16-bit forward/backward only), and
//                 "policy-<p>" (the configured 16-bit update policy)
//   mlp-demo      one-hidden-layer classifier with per-tensor update policies
//   cancellation  nearest-policy run logging per-step cancel_frac plus an
//                 early/late-window summary row per seed
//   format-sweep  formats x policies grid, one summary row per pair
//   bounds-check  empirical validators of the cancellation-radius sufficiency
//                 condition, the halting lower bound, and the contraction
//                 upper bound, reported as a probe-level CSV
enum class ExperimentKind {
  LsqTheory,
  LsqFigure,
  MlpDemo,
  Cancellation,
  FormatSweep,
  BoundsCheck,
};

ExperimentKind parse_kind(const std::string& name);
std::string kind_name(ExperimentKind k);

// One experiment, fully determined: a config plus the binary version fixes
// every output bit.  Member initializers below are the documented defaults;
// a JSON config may set any subset of keys (names match the comments) and
// any unknown key is rejected with ConfigError.
struct ExperimentConfig {
  int schema_version = 1;  // only version 1 is accepted
  ExperimentKind kind = ExperimentKind::LsqFigure;  // "kind", required
  std::string format = "E8M7";   // working low-precision format
  std::string policy = "nearest";  // update policy (the 4th figure arm)
  std::map<std::string, std::string> tensor_policies;  // mlp: w1/b1/w2/b2
  std::string optimizer = "sgd";   // "sgd" | "adamw"
  double lr = 0.01;
  bool lr_relative_to_L = false;   // true: effective lr = lr / L(instance)
  double momentum = 0.0;           // sgd
  double weight_decay = 0.0;
  double beta1 = 0.9;              // adamw
  double beta2 = 0.99609375;       // adamw; largest bf16 value below 1
  double denom_epsilon = 1e-7;     // adamw
  // piecewise-constant lr overrides, JSON [[step, lr], ...], strictly
  // increasing steps; values are divided by L too when lr_relative_to_L
  std::vector<std::pair<std::uint64_t, double>> lr_breakpoints;
  std::uint64_t steps = 50000;
  std::uint64_t log_every = 1;     // rows at steps t with t % log_every == 0
  std::uint64_t smoothing_window = 100;  // trailing mean over logged rows;
                                         // 0 removes the loss_smooth column
  std::vector<std::uint64_t> seeds = {1};  // run seeds (one series each)
  std::uint64_t instance_seed = 1;         // dataset / start-direction seed
  std::size_t d = 10;              // problem dimension (mlp: input_dim)
  std::size_t n = 2048;            // sample count
  double w_lo = 0.0;               // JSON "w_range": [lo, hi)
  double w_hi = 100.0;
  double noise_std = 0.5;          // label noise (lsq kinds)
  bool round_forward_backward = true;  // mlp-demo operator rounding
  // start point: "zero" starts at the origin; "offset" starts at w* plus a
  // random direction of length w0_distance, snapped to the weight grid
  // (distance 0 starts exactly at w* on a snapped instance)
  std::string w0_mode = "zero";
  double w0_distance = 0.0;
  std::string output_path = "out";
  // format-sweep
  std::vector<std::string> sweep_formats = {"E8M7", "E8M5", "E8M3", "E8M1"};
  std::vector<std::string> sweep_policies = {"nearest"};
  // bounds-check
  std::size_t sufficiency_probes = 140;  // in-radius probes per format
  std::vector<std::string> sufficiency_formats = {"E8M7", "E8M5", "E8M3"};
  double sufficiency_alpha = 0.1;        // learning rate relative to L
  std::vector<std::uint64_t> checkpoints = {10, 100, 1000};
  std::size_t convergence_n = 1024;      // sample count, contraction check
  // mlp-demo
  std::size_t hidden_dim = 8;
};

// Parse a JSON config document (throws ConfigError on syntax errors, type
// errors, unknown keys, or an unsupported schema_version).  The result is
// already validated via validate_config.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Cross-field validation: formats and policies must parse, dimensions and
// rates must be positive where required, kind-specific preconditions hold.
// Throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

// Decimal rendering with 17 significant digits ("%.17g"): round-trip exact
// for binary64 values.  Used for every real-valued CSV field.
std::string csv_double(double v);

// Worker-pool width for `tasks` independent tasks: LPREC_THREADS when set
// (must parse as a positive integer, otherwise ConfigError), else the
// hardware concurrency; always clamped to [1, tasks].
std::size_t worker_count(std::size_t tasks);

// Per-arm outcome.  final_* are means over the non-aborted seed series of
// that series' last logged value (NaN when nothing was logged).
struct ArmSummary {
  std::string name;           // CSV "policy" column value / file-name suffix
  std::string weight_format;  // format the weights are stored in
  std::string file;           // per-step CSV path ("" for summary-only arms)
  double final_loss = 0.0;
  double final_smoothed = 0.0;
  double final_dist = 0.0;
  bool flagged = false;  // some seed aborted on a non-finite value, or a
                         // validator found a violation
  std::vector<std::string> warnings;  // hyperparameter quantization notes
};

struct RunReport {
  ExperimentKind kind = ExperimentKind::LsqFigure;
  std::vector<std::string> files;  // every file written, in creation order
  std::vector<ArmSummary> arms;
  bool any_flagged = false;        // process exit code 2 when set
};

// Batch-1 SGD/AdamW training on one synthetic least-squares instance
// (kinds lsq-theory and lsq-figure).  Writes one CSV per arm,
// "<kind>_<arm>.csv" under cfg.output_path, with columns
//   step,loss[,loss_smooth],dist_to_opt,cancel_frac,lr,policy,seed,flag
// logged every cfg.log_every steps; rows are grouped per seed in config
// order and strictly increasing in step within a (policy, seed) series.
// cancel_frac is that step's cancelled/nonzero update ratio, empty when the
// step had no nonzero updates; flag is empty normally and "non-finite" on
// the final row of an aborted arm.  Sample indices come from stream
// (seed, "sample-index") shared by all arms; update rounding draws come
// from (seed, "arm/<name>/w"), so adding an arm never perturbs another
// arm's bits.
RunReport run_lsq_experiment(const ExperimentConfig& cfg);

// One-hidden-layer classifier demo (kind mlp-demo): input_dim = d, per-step
// batch loss in the loss column, dist_to_opt empty, cancel_frac aggregated
// over the four parameter tensors.  Per-tensor update policies come from
// cfg.tensor_policies (default cfg.policy); the forward/backward chain
// always rounds to nearest.
RunReport run_mlp_demo(const ExperimentConfig& cfg);

// Nearest-policy cancellation study (kind cancellation): the per-step CSV
// plus "cancellation_summary.csv" with one row per seed
// (seed,early_mean,late_mean), the windows being the first and last 10% of
// steps; means ignore rows with undefined cancel_frac.  Requires the
// nearest update policy (ConfigError otherwise).
RunReport run_cancellation_study(const ExperimentConfig& cfg);

// Formats x policies grid (kind format-sweep): trains one 16-bit arm per
// (format, policy) pair on a shared instance and writes
// "format-sweep_summary.csv" with columns
//   format,policy,final_loss,final_smoothed,final_dist,radius,flag
// where radius is the predicted cancellation radius at that format's
// epsilon and the arm's quantized learning rate.  Per-arm failures are
// flagged in the row and the sweep continues.
RunReport run_format_sweep(const ExperimentConfig& cfg);

// Empirical bound validators (kind bounds-check).  Writes
//   bounds-check_sufficiency_<FORMAT>.csv   one row per probe point
//   bounds-check_trajectory.csv             one row per seed
//   bounds-check_convergence.csv            one row per checkpoint
// all with the unified validator schema
//   probe_id,distance,radius,predicted,observed_cancelled,bound_value,
//   measured_value
// (fields that do not apply to a check are left empty).  Sufficiency probes
// use snapped instances per format at lr sufficiency_alpha/L; the
// trajectory check runs cfg.seeds nearest-policy runs against the halting
// lower bound; the convergence check runs the binary32-master arm against
// the contraction bound at cfg.checkpoints.  Any violation flags the run.
RunReport run_bounds_check(const ExperimentConfig& cfg);

// Dispatch on cfg.kind.
RunReport run_experiment(const ExperimentConfig& cfg);

}  // namespace lprec
