// SPDX-License-Identifier: Apache-2.0
//
// lprec — command-line front end for the low-precision training simulator.
//
//   lprec run --config cfg.json [overrides]     lsq-theory | lsq-figure | mlp-demo
//   lprec sweep --config cfg.json               format-sweep
//   lprec cancellation --config cfg.json        cancellation
//   lprec bounds-check --config cfg.json        bounds-check
//   lprec formats [NAMES...]                    describe number formats
//
// Exit codes: 0 success, 1 configuration error, 2 numeric failure or a
// flagged run (non-finite series, violated bound, counterexample).

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <string>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/formats.hpp"
#include "lprec/harness.hpp"
#include "lprec/optim.hpp"

namespace {

using namespace lprec;

struct CliOptions {
  std::string config;
  std::string format;
  std::string policy;
  std::string out;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  bool have_seed = false;
  bool have_steps = false;
};

void add_common_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--config", o.config, "path to a JSON experiment config");
  sub->add_option("--format", o.format,
                  "override the 16-bit number format (e.g. E8M7, E5M10)");
  sub->add_option("--policy", o.policy,
                  "override the weight update policy (nearest|stochastic|"
                  "kahan|kahan-stochastic|master32)");
  sub->add_option("--seed", o.seed, "run a single training seed")
      ->each([&](const std::string&) { o.have_seed = true; });
  sub->add_option("--steps", o.steps, "override the step count")
      ->each([&](const std::string&) { o.have_steps = true; });
  sub->add_option("--out", o.out, "override the output directory");
}

void print_report(const RunReport& rep) {
  for (const ArmSummary& arm : rep.arms) {
    std::string line = "arm " + arm.name + " [" + arm.weight_format + "]";
    if (std::isfinite(arm.final_loss))
      line += "  final_loss=" + csv_double(arm.final_loss);
    if (std::isfinite(arm.final_smoothed))
      line += "  final_smoothed=" + csv_double(arm.final_smoothed);
    if (std::isfinite(arm.final_dist))
      line += "  final_dist=" + csv_double(arm.final_dist);
    if (arm.flagged) line += "  FLAGGED";
    if (!arm.file.empty()) line += "  -> " + arm.file;
    std::printf("%s\n", line.c_str());
    for (const std::string& w : arm.warnings)
      std::printf("  note: %s\n", w.c_str());
  }
}

int execute(const CliOptions& o,
            std::initializer_list<ExperimentKind> allowed,
            const char* subname) {
  // overrides are validated before the config is even opened, so a bad
  // --format fails fast with a clear message
  if (!o.format.empty()) parse_format(o.format);
  if (!o.policy.empty()) parse_policy(o.policy);
  if (o.config.empty())
    throw ConfigError("config: --config is required for '" +
                      std::string(subname) + "'");
  ExperimentConfig cfg = load_config_file(o.config);
  if (!o.format.empty()) cfg.format = o.format;
  if (!o.policy.empty()) cfg.policy = o.policy;
  if (o.have_seed) cfg.seeds = {o.seed};
  if (o.have_steps) cfg.steps = o.steps;
  if (!o.out.empty()) cfg.output_path = o.out;
  validate_config(cfg);

  bool ok = false;
  for (ExperimentKind k : allowed) ok = ok || (k == cfg.kind);
  if (!ok) {
    std::string names;
    for (ExperimentKind k : allowed) {
      if (!names.empty()) names += "|";
      names += kind_name(k);
    }
    throw ConfigError("config: kind '" + kind_name(cfg.kind) +
                      "' does not belong to subcommand '" + subname +
                      "' (expected " + names + ")");
  }
  const RunReport rep = run_experiment(cfg);
  print_report(rep);
  return rep.any_flagged ? 2 : 0;
}

int run_formats(std::vector<std::string> names) {
  if (names.empty())
    names = {"E8M7", "E8M5", "E8M3", "E8M1", "E5M10"};
  std::printf("%-8s %5s %14s %14s %14s %15s\n", "format", "bits", "epsilon",
              "max_finite", "min_normal", "min_subnormal");
  for (const std::string& n : names) {
    const FloatFormat f = parse_format(n);
    std::printf("%-8s %5d %14.8g %14.8g %14.8g %15.8g\n", f.name().c_str(),
                f.total_bits(), f.machine_epsilon(), f.max_finite(),
                f.min_normal(), f.min_subnormal());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bit-exact simulator of low-precision training"};
  app.require_subcommand(1);

  CliOptions opts;
  CLI::App* run_sub = app.add_subcommand(
      "run", "train on a config of kind lsq-theory, lsq-figure or mlp-demo");
  add_common_options(run_sub, opts);
  CLI::App* sweep_sub =
      app.add_subcommand("sweep", "run a format-sweep config");
  add_common_options(sweep_sub, opts);
  CLI::App* cancel_sub = app.add_subcommand(
      "cancellation", "run a cancellation study (nearest rounding only)");
  add_common_options(cancel_sub, opts);
  CLI::App* bounds_sub = app.add_subcommand(
      "bounds-check", "validate the analytic bounds on a bounds-check config");
  add_common_options(bounds_sub, opts);

  std::vector<std::string> format_names;
  CLI::App* formats_sub =
      app.add_subcommand("formats", "print a table of number formats");
  formats_sub->add_option("names", format_names,
                          "formats to describe (default: the 16-bit family)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (formats_sub->parsed()) return run_formats(format_names);
    if (run_sub->parsed())
      return execute(opts,
                     {ExperimentKind::LsqTheory, ExperimentKind::LsqFigure,
                      ExperimentKind::MlpDemo},
                     "run");
    if (sweep_sub->parsed())
      return execute(opts, {ExperimentKind::FormatSweep}, "sweep");
    if (cancel_sub->parsed())
      return execute(opts, {ExperimentKind::Cancellation}, "cancellation");
    if (bounds_sub->parsed())
      return execute(opts, {ExperimentKind::BoundsCheck}, "bounds-check");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  }
  return 0;
}
