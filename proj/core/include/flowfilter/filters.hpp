// Particle-flow filters in one McKean-Vlasov form
//
//   dX = M(X) dt + dV + a(X, rho) dt + K(X, rho) dZ^delta,
//
// with the delta-FPF, delta-Reich, Crisan-Xiong, continuous FPF/Crisan-Xiong
// and EnKBF coefficient choices. Particles are never resampled.
#pragma once

#include "flowfilter/ensemble.hpp"
#include "flowfilter/gain.hpp"
#include "flowfilter/models.hpp"
#include "flowfilter/paths.hpp"
#include "flowfilter/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flowfilter {

struct FilterSpec {
  FilterKind kind = FilterKind::enkbf;
  GainOptions gain;
  /// Drive with raw fine increments dZ instead of slope * dt. Continuous
  /// kinds always do; the EnKBF may opt in.
  bool raw_increments = false;
  /// Solve the coefficients once per mesh interval instead of every fine
  /// step (an approximation, flagged in outputs).
  bool freeze_gain_per_mesh = false;
  std::string label;

  /// Label defaults to the kind name (plus the mass matrix for Reich).
  std::string name() const;
};

FilterSpec make_filter_spec(FilterKind kind, GainOptions gain = {});

struct StepLogEntry {
  std::size_t step = 0;
  double t = 0.0;
  GainDiagnostics diagnostics;
};

struct FilterState {
  FilterState(Ensemble ens, FilterSpec spec, double t0 = 0.0)
      : ensemble(std::move(ens)), time(t0), spec(std::move(spec)) {}

  Ensemble ensemble;
  double time;
  /// Fine steps taken so far; addresses the per-particle noise counters.
  std::uint64_t step = 0;
  FilterSpec spec;
  std::vector<StepLogEntry> step_log;
  std::optional<FilterCoefficients> frozen;
};

/// One fine step of the unified update with given coefficients. `dy` is
/// slope * dt for delta-filters and the raw increment dZ for continuous ones.
/// Particle i draws dV from `noise` at (step, i).
void advance_particles(Ensemble& ens, const SystemModel& model, const FilterCoefficients& c,
                       double dy, double dt, const IncrementSource& noise, std::uint64_t step);

/// Solves the coefficients for the current cloud (or reuses the frozen
/// ones when `refresh` is false) and advances one fine step.
void step_filter(FilterState& state, const SystemModel& model, double dy, double dt,
                 const IncrementSource& noise, bool refresh = true);

void step_delta_fpf(FilterState& state, const SystemModel& model, double slope, double dt,
                    const IncrementSource& noise);
void step_delta_reich(FilterState& state, const SystemModel& model, double slope, double dt,
                      const IncrementSource& noise);
void step_crisan_xiong(FilterState& state, const SystemModel& model, double slope, double dt,
                       const IncrementSource& noise);
void step_fpf_continuous(FilterState& state, const SystemModel& model, double dz, double dt,
                         const IncrementSource& noise);
void step_crisan_continuous(FilterState& state, const SystemModel& model, double dz, double dt,
                            const IncrementSource& noise);
/// `dy` is slope * dt or a raw increment, matching FilterSpec::raw_increments.
void step_enkbf(FilterState& state, const SystemModel& model, double dy, double dt,
                const IncrementSource& noise);

struct FilterRun {
  FilterSpec spec;
  std::vector<double> times;  // mesh times with recorded moments
  std::vector<Moments> moments;
  std::vector<StepLogEntry> step_log;
  ParticleMatrix final_particles;
  /// Set when a step failed; the recorded trajectory stops there.
  std::optional<ErrorCode> failure_code;
  std::string failure;
  std::size_t failed_step = 0;

  bool ok() const noexcept { return !failure_code.has_value(); }
};

/// Runs over the whole observation path, recording moments at every mesh
/// point (including t0), or at every fine step with record_fine. Errors are
/// captured in the result, not thrown.
FilterRun run_filter(const FilterSpec& spec, const SystemModel& model,
                     const ObservationPath& path, const ParticleMatrix& initial,
                     const IncrementSource& noise, bool record_fine = false);

}  // namespace flowfilter
