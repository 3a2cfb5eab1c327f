// flowfilter run|sweep|theory <config.json> [--seed N] [--out-dir DIR] [--threads N]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 1 anything else (I/O, unexpected exceptions).

#include "flowfilter/config.hpp"
#include "flowfilter/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("config", o.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "base seed; replaces every seed in the configuration");
  cmd->add_option("--out-dir", o.out_dir, "output directory for the CSV tables");
  cmd->add_option("--threads", o.threads, "worker threads (results do not depend on it)")
      ->check(CLI::Range(1, 1024));
}

flowfilter::ExperimentConfig load(const Options& o) {
  auto cfg = flowfilter::load_config_file(o.config);
  if (o.seed) {
    cfg.seeds = {};
    cfg.seeds.base = *o.seed;
    for (auto& f : cfg.filters) f.seed.reset();
    if (!cfg.sweep.seeds.empty()) cfg.sweep.seeds = {*o.seed};
  }
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.threads) flowfilter::set_worker_threads(*o.threads);
  return cfg;
}

int run_command(const Options& o) {
  const auto cfg = load(o);
  const auto rep = flowfilter::run_experiment(cfg);
  flowfilter::emit_run(rep, cfg.out_dir);
  std::fprintf(stderr, "run '%s': %zu filter(s), slope checksum %016llx, %.2f s\n", cfg.name.c_str(),
               rep.filters.size(), static_cast<unsigned long long>(rep.slope_checksum),
               rep.wall_clock_seconds);
  int code = kExitOk;
  for (const auto& f : rep.filters) {
    if (!f.run.ok()) {
      std::fprintf(stderr, "  %s failed at step %zu: %s\n", f.run.spec.name().c_str(),
                   f.run.failed_step, f.run.failure.c_str());
      code = kExitNumerical;
    }
  }
  return code;
}

int sweep_command(const Options& o) {
  const auto cfg = load(o);
  if (cfg.sweep.deltas.empty() && cfg.sweep.ensemble_sizes.empty()) {
    throw flowfilter::ConfigError("sweep", "needs deltas and/or ensemble_sizes");
  }
  int code = kExitOk;
  auto report = [&](const flowfilter::SweepReport& r, const char* what) {
    for (const auto& row : r.rows) {
      if (!row.ok) code = kExitNumerical;
    }
    for (const auto& t : r.trends) {
      std::fprintf(stderr, "%s sweep, %s, seed %llu: %s\n", what, t.filter.c_str(),
                   static_cast<unsigned long long>(t.seed), t.trend.c_str());
    }
  };
  if (!cfg.sweep.deltas.empty()) {
    const auto r = flowfilter::run_delta_sweep(cfg);
    flowfilter::emit_sweep(r, cfg.out_dir, "sweep");
    report(r, "delta");
  }
  if (!cfg.sweep.ensemble_sizes.empty()) {
    const auto r = flowfilter::run_ensemble_sweep(cfg);
    flowfilter::emit_sweep(r, cfg.out_dir, "sweep_n");
    report(r, "N");
  }
  return code;
}

int theory_command(const Options& o) {
  const auto cfg = load(o);
  const auto r = flowfilter::run_theory(cfg);
  flowfilter::emit_theory(r, cfg.out_dir);
  for (const auto& row : r.rows) {
    if (!row.passed) std::fprintf(stderr, "certificate %s did not hold\n", row.name.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-flow filters: experiments, sweeps and certificates"};
  app.require_subcommand(1);
  Options opts;
  auto* run = app.add_subcommand("run", "run every configured filter on one simulated path");
  auto* sweep = app.add_subcommand("sweep", "convergence study over delta and/or ensemble size");
  auto* theory = app.add_subcommand("theory", "Poincare-constant certificates");
  add_common(run, opts);
  add_common(sweep, opts);
  add_common(theory, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return run_command(opts);
    if (sweep->parsed()) return sweep_command(opts);
    return theory_command(opts);
  } catch (const flowfilter::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const flowfilter::Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << '\n';
    if (e.code() == flowfilter::ErrorCode::non_nested_meshes) return kExitConfig;
    if (e.code() == flowfilter::ErrorCode::io_error) return kExitOther;
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}
