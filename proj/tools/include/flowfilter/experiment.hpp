// Experiment orchestration: simulate one truth/observation path, run every
// configured filter on it, compare against the matching reference solution,
// and tabulate the results.
#pragma once

#include "flowfilter/config.hpp"
#include "flowfilter/csv.hpp"
#include "flowfilter/filters.hpp"
#include "flowfilter/paths.hpp"
#include "flowfilter/reference.hpp"
#include "flowfilter/theory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace flowfilter {

/// Version stamped into every table this layer writes.
inline constexpr int kCsvSchemaVersion = 1;

struct SeedSet {
  std::uint64_t truth = 0;
  std::uint64_t observation = 0;
  std::uint64_t initial = 0;
  std::uint64_t particles = 0;
};

/// splitmix64 of (base, role); explicit seeds in the config take precedence.
SeedSet resolve_seeds(const SeedConfig& seeds);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t role) noexcept;

struct SimulatedPath {
  TruthTrajectory truth;
  ObservationPath path;
};

SimulatedPath simulate_path(const SystemModel& model, const InitialDensity& initial,
                            const TimeGrid& grid, const SeedSet& seeds);

/// Posterior moments of a reference solution at the mesh points.
struct ReferenceSeries {
  std::string name;  // kalman_bucy / grid_kushner, with a _raw suffix for fine driving
  bool raw_increments = false;
  std::vector<double> times;
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  std::optional<GridKushnerRun> grid_run;
};

/// Kalman-Bucy for linear-Gaussian models, the grid solver for other scalar
/// models, nothing otherwise. With raw_increments the reference follows the
/// unsmoothed path.
std::optional<ReferenceSeries> compute_reference(const ExperimentConfig& cfg,
                                                 const SystemModel& model,
                                                 const ObservationPath& path,
                                                 bool raw_increments,
                                                 const std::vector<double>& snapshot_times = {},
                                                 bool record_fine = false);

/// Grid used by the scalar reference solver for this configuration.
UniformGrid reference_grid(const ExperimentConfig& cfg);

struct FilterResult {
  FilterRun run;
  std::string reference;  // empty when no reference applies
  std::vector<double> err_mean;  // |mean - reference mean| per recorded time
  std::vector<double> err_cov;   // Frobenius norm per recorded time
  double mean_err_avg = 0.0;
  double var_ratio_err_avg = 0.0;  // time average of max_j |P_jj / P_ref_jj - 1|
  double rmse_mean = 0.0;
  double terminal_err_mean = 0.0;
  double max_residual = 0.0;
  double max_condition = 0.0;
  double max_tail = 0.0;
  std::size_t floor_active = 0;
  std::size_t degenerate_steps = 0;
};

struct RunReport {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t dim = 1;
  std::uint64_t slope_checksum = 0;
  std::optional<SimulatedPath> simulated;
  std::vector<ReferenceSeries> references;
  std::vector<FilterResult> filters;
  double wall_clock_seconds = 0.0;  // not written to any table

  bool all_ok() const;
};

/// Runs every filter on one shared path. Filter failures are recorded in
/// their results; reference failures propagate.
RunReport run_experiment(const ExperimentConfig& cfg);

/// Same, on a caller-supplied path and initial ensemble.
RunReport run_on_path(const ExperimentConfig& cfg, const SystemModel& model,
                      const ObservationPath& path, const ParticleMatrix& initial_particles,
                      const SeedSet& seeds);

/// Moment errors of one filter run against a reference on shared times.
FilterResult compare_to_reference(FilterRun run, const ReferenceSeries* ref);

struct SweepRow {
  std::string sweep;  // "delta" or "N"
  double delta_or_n = 0.0;
  std::uint64_t seed = 0;
  std::string filter;
  double rmse = 0.0;
  /// RMSE on the coarsest mesh only, where Z^delta meets Z.
  double rmse_mesh = 0.0;
  bool ok = true;
};

struct SweepTrend {
  std::string sweep;
  std::string filter;
  std::uint64_t seed = 0;
  /// Spearman correlation between refinement index (or N) and RMSE; below
  /// zero means the error falls as the sweep refines.
  std::optional<double> spearman;
  bool monotone = false;
  std::string trend;  // decreasing / not_decreasing / n/a
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<SweepTrend> trends;
};

/// Pathwise RMSE of each filter's mean against the raw-increment reference
/// over every fine step of [t0, T], for every delta and seed (rmse_mesh
/// restricts it to the coarsest mesh). One fine path per seed is shared
/// across deltas. NonNestedMeshes unless each delta
/// (sorted descending) is an integer multiple of the next.
SweepReport run_delta_sweep(const ExperimentConfig& cfg);

/// RMSE against the matching reference for every ensemble size and seed.
SweepReport run_ensemble_sweep(const ExperimentConfig& cfg);

struct TheoryRow {
  std::string name;
  std::string provenance;
  std::string inputs;  // key=value pairs separated by ';'
  double kappa = 0.0;
  std::optional<double> kappa_emp;
  std::optional<double> margin;  // kappa - kappa_emp
  bool passed = true;
  std::string note;
};

struct TheoryReport {
  std::vector<TheoryRow> rows;
  std::optional<GammaTrace> gamma;
};

TheoryReport run_theory(const ExperimentConfig& cfg);

// Tables. Empty reports give header-only tables.
CsvTable series_table(const RunReport& r);
CsvTable summary_table(const RunReport& r);
CsvTable gain_log_table(const RunReport& r);
CsvTable sweep_table(const SweepReport& r);
CsvTable sweep_trend_table(const SweepReport& r);
CsvTable theory_table(const TheoryReport& r);
CsvTable gamma_table(const TheoryReport& r);

/// Write the tables into `dir` (created if missing). IoError on failure.
void emit_run(const RunReport& r, const std::string& dir);
void emit_sweep(const SweepReport& r, const std::string& dir, const std::string& stem);
void emit_theory(const TheoryReport& r, const std::string& dir);

}  // namespace flowfilter
