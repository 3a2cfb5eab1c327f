#include "flowfilter/filters.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flowfilter {

std::string FilterSpec::name() const {
  if (!label.empty()) return label;
  std::string n(to_string(kind));
  if (kind == FilterKind::delta_reich) n += "_" + std::string(to_string(gain.mass_matrix));
  return n;
}

FilterSpec make_filter_spec(FilterKind kind, GainOptions gain) {
  FilterSpec s;
  s.kind = kind;
  s.gain = std::move(gain);
  s.raw_increments = is_continuous(kind);
  return s;
}

void advance_particles(Ensemble& ens, const SystemModel& model, const FilterCoefficients& c,
                       double dy, double dt, const IncrementSource& noise, std::uint64_t step) {
  const std::size_t N = ens.size();
  const std::size_t d = ens.dim();
  if (!c.gain || c.gain->dim() != d || (c.drift && c.drift->dim() != d)) {
    throw Error(ErrorCode::invalid_argument, "coefficient fields do not match the ensemble");
  }
  auto& x = ens.particles_mut();
  detail::parallel_for(N, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    std::span<double> xi = row_span(x, row);
    // Per-thread scratch: old state, drift, noise, gain, aux drift, Ito term, Jacobian.
    thread_local std::vector<double> scratch;
    scratch.assign(6 * d + (c.ito_correction ? d * d : 0), 0.0);
    std::span<double> buf(scratch);
    const std::span<double> old = buf.subspan(0, d), f = buf.subspan(d, d),
                            dv = buf.subspan(2 * d, d), k = buf.subspan(3 * d, d),
                            a = buf.subspan(4 * d, d), ito = buf.subspan(5 * d, d),
                            jac = buf.subspan(6 * d);
    std::copy(xi.begin(), xi.end(), old.begin());
    model.drift(old, f);
    noise.draw(step, i, dt, dv);
    c.gain->value(old, k);
    if (c.drift) c.drift->value(old, a);
    double innov = dy;
    if (c.innovation_weight != 0.0) {
      innov += c.innovation_weight * (model.obs(old) + c.h_bar) * dt;
    }
    if (c.ito_correction) {
      c.gain->jacobian(old, jac);
      for (std::size_t p = 0; p < d; ++p) {
        double s = 0.0;
        for (std::size_t q = 0; q < d; ++q) s += jac[p * d + q] * k[q];
        ito[p] = 0.5 * s;
      }
    }
    for (std::size_t p = 0; p < d; ++p) {
      double v = old[p] + f[p] * dt + dv[p];
      if (c.drift) v += a[p] * dt;
      v += k[p] * innov;
      if (c.ito_correction) v += ito[p] * dt;
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::non_finite_state,
                    "particle " + std::to_string(i) + " became non-finite at step " +
                        std::to_string(step + 1));
      }
      xi[p] = v;
    }
  });
}

void step_filter(FilterState& state, const SystemModel& model, double dy, double dt,
                 const IncrementSource& noise, bool refresh) {
  if (!(dt > 0.0)) throw Error(ErrorCode::non_positive_delta, "step needs dt > 0");
  if (refresh || !state.frozen) {
    state.frozen = assemble_filter_coefficients(state.spec.kind, state.spec.gain,
                                                state.ensemble, model);
    state.step_log.push_back({static_cast<std::size_t>(state.step), state.time,
                              state.frozen->diagnostics});
  }
  advance_particles(state.ensemble, model, *state.frozen, dy, dt, noise, state.step);
  ++state.step;
  state.time += dt;
}

namespace {

void require_kind(const FilterState& s, FilterKind k) {
  if (s.spec.kind != k) {
    throw Error(ErrorCode::invalid_argument,
                "filter state is " + std::string(to_string(s.spec.kind)) + ", expected " +
                    std::string(to_string(k)));
  }
}

}  // namespace

void step_delta_fpf(FilterState& state, const SystemModel& model, double slope, double dt,
                    const IncrementSource& noise) {
  require_kind(state, FilterKind::delta_fpf);
  step_filter(state, model, slope * dt, dt, noise);
}

void step_delta_reich(FilterState& state, const SystemModel& model, double slope, double dt,
                      const IncrementSource& noise) {
  require_kind(state, FilterKind::delta_reich);
  step_filter(state, model, slope * dt, dt, noise);
}

void step_crisan_xiong(FilterState& state, const SystemModel& model, double slope, double dt,
                       const IncrementSource& noise) {
  require_kind(state, FilterKind::crisan_xiong);
  step_filter(state, model, slope * dt, dt, noise);
}

void step_fpf_continuous(FilterState& state, const SystemModel& model, double dz, double dt,
                         const IncrementSource& noise) {
  require_kind(state, FilterKind::fpf_continuous);
  step_filter(state, model, dz, dt, noise);
}

void step_crisan_continuous(FilterState& state, const SystemModel& model, double dz, double dt,
                            const IncrementSource& noise) {
  require_kind(state, FilterKind::crisan_continuous);
  step_filter(state, model, dz, dt, noise);
}

void step_enkbf(FilterState& state, const SystemModel& model, double dy, double dt,
                const IncrementSource& noise) {
  require_kind(state, FilterKind::enkbf);
  if (!model.is_linear_gaussian()) {
    throw Error(ErrorCode::model_mismatch, "the EnKBF needs a linear-Gaussian model");
  }
  step_filter(state, model, dy, dt, noise);
}

FilterRun run_filter(const FilterSpec& spec, const SystemModel& model,
                     const ObservationPath& path, const ParticleMatrix& initial,
                     const IncrementSource& noise, bool record_fine) {
  FilterRun run;
  run.spec = spec;
  const TimeGrid& grid = path.grid();
  const std::size_t r = grid.fine_per_mesh();
  const double dt = grid.fine_dt();
  const bool raw = spec.raw_increments || is_continuous(spec.kind);
  try {
    if (spec.kind == FilterKind::enkbf && !model.is_linear_gaussian()) {
      throw Error(ErrorCode::model_mismatch, "the EnKBF needs a linear-Gaussian model");
    }
    FilterState state(Ensemble(initial), spec, grid.t0());
    run.times.push_back(grid.t0());
    run.moments.push_back(compute_moments(state.ensemble, model));
    for (std::size_t k = 0; k < grid.fine_steps(); ++k) {
      const std::size_t n = grid.mesh_of_fine(k);
      const double dy = raw ? path.increment(k) : path.slopes()[n] * dt;
      const bool refresh = !spec.freeze_gain_per_mesh || k % r == 0;
      try {
        step_filter(state, model, dy, dt, noise, refresh);
      } catch (...) {
        run.failed_step = k + 1;
        run.final_particles = state.ensemble.particles();
        run.step_log = std::move(state.step_log);
        throw;
      }
      if (record_fine && (k + 1) % r != 0) {
        run.times.push_back(grid.fine_time(k + 1));
        run.moments.push_back(compute_moments(state.ensemble, model));
      } else if ((k + 1) % r == 0) {
        run.times.push_back(grid.mesh_time(n + 1));
        run.moments.push_back(compute_moments(state.ensemble, model));
      }
    }
    run.final_particles = state.ensemble.particles();
    run.step_log = std::move(state.step_log);
  } catch (const Error& e) {
    run.failure_code = e.code();
    run.failure = e.what();
  }
  return run;
}

}  // namespace flowfilter
