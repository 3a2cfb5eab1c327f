#include "flowfilter/experiment.hpp"

#include "flowfilter/numerics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

namespace flowfilter {

namespace {

constexpr std::uint64_t kRoleTruth = 1;
constexpr std::uint64_t kRoleObservation = 2;
constexpr std::uint64_t kRoleInitial = 3;
constexpr std::uint64_t kRoleParticles = 4;

std::string version_field() { return std::to_string(kCsvSchemaVersion); }

std::string hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

bool divides(double big, double small) {
  const double r = big / small;
  return std::round(r) >= 1.0 && std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
}

std::size_t ratio(double big, double small) {
  return static_cast<std::size_t>(std::llround(big / small));
}

TimeGrid make_grid(const ExperimentConfig& cfg, double delta) {
  return TimeGrid(cfg.grid.t0, cfg.grid.T, cfg.grid.fine_dt, delta);
}

FilterRun run_isolated(const FilterSpec& spec, const SystemModel& model,
                       const ObservationPath& path, const ParticleMatrix& initial,
                       std::uint64_t noise_seed, bool record_fine = false) {
  try {
    const GaussianIncrements noise(noise_seed, Stream::particles);
    return run_filter(spec, model, path, initial, noise, record_fine);
  } catch (const Error& e) {
    FilterRun r;
    r.spec = spec;
    r.failure_code = e.code();
    r.failure = e.what();
    return r;
  } catch (const std::exception& e) {
    FilterRun r;
    r.spec = spec;
    r.failure_code = ErrorCode::non_finite_state;
    r.failure = e.what();
    return r;
  }
}

// RMSE of the filter mean over every `stride`-th recorded point (skipping
// t0), against reference points taken every `ref_stride`.
double strided_rmse(const FilterRun& run, std::size_t stride, const ReferenceSeries& ref,
                    std::size_t ref_stride, std::size_t points) {
  if (!run.ok()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sq;
  for (std::size_t n = 1; n <= points; ++n) {
    const std::size_t i = n * stride, j = n * ref_stride;
    if (i >= run.moments.size() || j >= ref.means.size()) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    const double e = (run.moments[i].mean - ref.means[j]).norm();
    sq.push_back(e * e);
  }
  return sq.empty() ? 0.0 : std::sqrt(mean(sq));
}

SweepTrend trend_of(const std::string& sweep, const std::string& filter, std::uint64_t seed,
                    const std::vector<double>& x, const std::vector<double>& rmse) {
  SweepTrend t;
  t.sweep = sweep;
  t.filter = filter;
  t.seed = seed;
  const bool finite = std::all_of(rmse.begin(), rmse.end(), [](double v) { return std::isfinite(v); });
  if (rmse.size() < 3 || !finite) {
    t.trend = "n/a";
    t.monotone = finite && rmse.size() >= 2 &&
                 std::is_sorted(rmse.rbegin(), rmse.rend());
    return t;
  }
  t.spearman = spearman(x, rmse);
  t.monotone = true;
  for (std::size_t i = 1; i < rmse.size(); ++i) t.monotone = t.monotone && rmse[i] <= rmse[i - 1];
  t.trend = *t.spearman < 0.0 ? "decreasing" : "not_decreasing";
  return t;
}

std::string inputs_string(const std::vector<std::pair<std::string, double>>& in) {
  std::string s;
  for (const auto& [k, v] : in) {
    if (!s.empty()) s += ';';
    s += k + '=' + format_double(v);
  }
  return s;
}

// Restricts a grid density to the window where it exceeds `rel` times its
// maximum, so spectral estimates never see underflowed tails.
Density1D positive_window(const Density1D& d, double rel = 1e-14) {
  const double peak = *std::max_element(d.values.begin(), d.values.end());
  std::size_t lo = 0, hi = d.values.size() - 1;
  while (lo < hi && !(d.values[lo] > rel * peak)) ++lo;
  while (hi > lo && !(d.values[hi] > rel * peak)) --hi;
  for (std::size_t i = lo; i <= hi; ++i) {
    if (!(d.values[i] > 0.0)) {
      throw Error(ErrorCode::non_positive_density, "grid density vanishes inside its support");
    }
  }
  Density1D out{{d.grid.x(lo), d.grid.dx, hi - lo + 1},
                {d.values.begin() + static_cast<std::ptrdiff_t>(lo),
                 d.values.begin() + static_cast<std::ptrdiff_t>(hi) + 1},
                std::nullopt};
  return out;
}

Density1D prior_table(const ExperimentConfig& cfg) {
  const double m = cfg.initial_mean[0];
  const double sd = std::sqrt(cfg.initial_cov(0, 0));
  const UniformGrid g{m - 10.0 * sd, 20.0 * sd / 4000.0, 4001};
  return gaussian_table(g, m, sd * sd);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir + ": " + ec.message());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t role) noexcept {
  std::uint64_t z = base + role * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SeedSet resolve_seeds(const SeedConfig& s) {
  return {s.truth.value_or(derive_seed(s.base, kRoleTruth)),
          s.observation.value_or(derive_seed(s.base, kRoleObservation)),
          s.initial.value_or(derive_seed(s.base, kRoleInitial)),
          s.particles.value_or(derive_seed(s.base, kRoleParticles))};
}

SimulatedPath simulate_path(const SystemModel& model, const InitialDensity& initial,
                            const TimeGrid& grid, const SeedSet& seeds) {
  const ParticleMatrix x0 = initial.sample(1, seeds.truth, Stream::initial);
  const GaussianIncrements signal(seeds.truth, Stream::signal);
  const GaussianIncrements obs(seeds.observation, Stream::observation);
  TruthTrajectory truth = simulate_truth(model, grid, row_span(x0, 0), signal, seeds.truth);
  ObservationPath path = simulate_observations(model, truth, grid, obs, seeds.observation);
  return {std::move(truth), std::move(path)};
}

UniformGrid reference_grid(const ExperimentConfig& cfg) {
  double half = cfg.reference.half_width;
  if (!(half > 0.0)) {
    const double m = std::abs(cfg.initial_mean[0]);
    const double sd = std::sqrt(cfg.initial_cov(0, 0));
    half = std::max(8.0, m + 10.0 * sd);
  }
  return UniformGrid::symmetric(half, cfg.reference.points);
}

std::optional<ReferenceSeries> compute_reference(const ExperimentConfig& cfg,
                                                 const SystemModel& model,
                                                 const ObservationPath& path, bool raw,
                                                 const std::vector<double>& snapshot_times,
                                                 bool record_fine) {
  ReferenceSeries ref;
  ref.raw_increments = raw;
  if (model.is_linear_gaussian()) {
    ref.name = raw ? "kalman_bucy_raw" : "kalman_bucy";
    const KalmanBucyRun kb = run_kalman_bucy(model.A(), model.H(),
                                             {cfg.initial_mean, cfg.initial_cov}, path, raw,
                                             record_fine);
    ref.times = kb.times;
    for (const auto& s : kb.states) {
      ref.means.push_back(s.mean);
      ref.covs.push_back(s.cov);
    }
    return ref;
  }
  if (model.dim() != 1) return std::nullopt;
  ref.name = raw ? "grid_kushner_raw" : "grid_kushner";
  const UniformGrid grid = reference_grid(cfg);
  const Density1D prior = gaussian_table(grid, cfg.initial_mean[0], cfg.initial_cov(0, 0));
  GridKushnerRun run = run_grid_kushner(model, prior, path, raw, snapshot_times, record_fine);
  ref.times = run.times;
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    ref.means.push_back(Vector::Constant(1, run.means[i]));
    ref.covs.push_back(Matrix::Constant(1, 1, run.variances[i]));
  }
  ref.grid_run = std::move(run);
  return ref;
}

FilterResult compare_to_reference(FilterRun run, const ReferenceSeries* ref) {
  FilterResult r;
  for (const auto& e : run.step_log) {
    r.max_residual = std::max(r.max_residual, e.diagnostics.residual);
    r.max_condition = std::max(r.max_condition, e.diagnostics.condition);
    r.max_tail = std::max(r.max_tail, e.diagnostics.tail);
    r.floor_active += e.diagnostics.floor_active;
    if (e.diagnostics.degenerate_density) ++r.degenerate_steps;
  }
  if (ref != nullptr) {
    r.reference = ref->name;
    std::vector<double> sq, ratio_err;
    const std::size_t n = std::min(run.times.size(), ref->times.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!same_time(run.times[i], ref->times[i])) {
        throw Error(ErrorCode::grid_mismatch, "filter and reference record different times");
      }
      const Moments& m = run.moments[i];
      const double em = (m.mean - ref->means[i]).norm();
      r.err_mean.push_back(em);
      r.err_cov.push_back((m.cov - ref->covs[i]).norm());
      sq.push_back(em * em);
      double worst = 0.0;
      for (Eigen::Index j = 0; j < m.cov.rows(); ++j) {
        worst = std::max(worst, std::abs(m.cov(j, j) / ref->covs[i](j, j) - 1.0));
      }
      ratio_err.push_back(worst);
    }
    if (!r.err_mean.empty()) {
      r.mean_err_avg = mean(r.err_mean);
      r.var_ratio_err_avg = mean(ratio_err);
      r.rmse_mean = std::sqrt(mean(sq));
      r.terminal_err_mean = r.err_mean.back();
    }
    if (!run.ok()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      r.mean_err_avg = r.var_ratio_err_avg = r.rmse_mean = r.terminal_err_mean = nan;
    }
  }
  r.run = std::move(run);
  return r;
}

bool RunReport::all_ok() const {
  return std::all_of(filters.begin(), filters.end(), [](const FilterResult& f) { return f.run.ok(); });
}

RunReport run_on_path(const ExperimentConfig& cfg, const SystemModel& model,
                      const ObservationPath& path, const ParticleMatrix& initial_particles,
                      const SeedSet& seeds) {
  RunReport rep;
  rep.name = cfg.name;
  rep.seed = cfg.seeds.base;
  rep.dim = model.dim();
  rep.slope_checksum = slope_checksum(path);

  const bool need_raw = std::any_of(cfg.filters.begin(), cfg.filters.end(),
                                    [](const FilterConfig& f) { return f.spec.raw_increments; });
  const bool need_smooth = cfg.filters.empty() ||
                           std::any_of(cfg.filters.begin(), cfg.filters.end(),
                                       [](const FilterConfig& f) { return !f.spec.raw_increments; });
  std::optional<std::size_t> smooth_idx, raw_idx;
  if (cfg.reference.enabled) {
    if (need_smooth) {
      if (auto r = compute_reference(cfg, model, path, false)) {
        smooth_idx = rep.references.size();
        rep.references.push_back(std::move(*r));
      }
    }
    if (need_raw) {
      if (auto r = compute_reference(cfg, model, path, true)) {
        raw_idx = rep.references.size();
        rep.references.push_back(std::move(*r));
      }
    }
  }

  for (const FilterConfig& fc : cfg.filters) {
    FilterRun run = run_isolated(fc.spec, model, path, initial_particles,
                                 fc.seed.value_or(seeds.particles));
    const auto idx = fc.spec.raw_increments ? raw_idx : smooth_idx;
    rep.filters.push_back(compare_to_reference(std::move(run), idx ? &rep.references[*idx] : nullptr));
  }
  return rep;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const SystemModel model = build_model(cfg);
  const InitialDensity initial = build_initial(cfg);
  const SeedSet seeds = resolve_seeds(cfg.seeds);
  const TimeGrid grid = make_grid(cfg, cfg.grid.delta);
  SimulatedPath sim = simulate_path(model, initial, grid, seeds);
  const ParticleMatrix x0 = initial.sample(cfg.ensemble_size, seeds.initial, Stream::initial);
  RunReport rep = run_on_path(cfg, model, sim.path, x0, seeds);
  rep.simulated = std::move(sim);
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

SweepReport run_delta_sweep(const ExperimentConfig& cfg) {
  std::vector<double> deltas = cfg.sweep.deltas;
  if (deltas.empty()) deltas.push_back(cfg.grid.delta);
  std::sort(deltas.begin(), deltas.end(), std::greater<>());
  for (std::size_t i = 0; i + 1 < deltas.size(); ++i) {
    if (!divides(deltas[i], deltas[i + 1])) {
      std::ostringstream os;
      os << "delta " << deltas[i] << " is not an integer multiple of " << deltas[i + 1];
      throw Error(ErrorCode::non_nested_meshes, os.str());
    }
  }
  const SystemModel model = build_model(cfg);
  const InitialDensity initial = build_initial(cfg);
  std::vector<std::uint64_t> seeds = cfg.sweep.seeds;
  if (seeds.empty()) seeds.push_back(cfg.seeds.base);

  const double coarse = deltas.front(), finest = deltas.back();
  (void)finest;
  const TimeGrid fine_grid = make_grid(cfg, finest);
  const TimeGrid coarse_grid = make_grid(cfg, coarse);
  const std::size_t points = coarse_grid.mesh_steps();

  SweepReport rep;
  for (std::uint64_t seed : seeds) {
    SeedConfig sc;
    sc.base = seed;
    if (cfg.sweep.seeds.empty()) sc = cfg.seeds;
    const SeedSet ss = resolve_seeds(sc);
    const SimulatedPath sim = simulate_path(model, initial, fine_grid, ss);
    const auto ref = compute_reference(cfg, model, sim.path, true, {}, true);
    if (!ref) throw Error(ErrorCode::model_mismatch, "delta sweep needs a reference solution");
    const std::size_t fine_steps = fine_grid.fine_steps();
    const std::size_t coarse_stride = ratio(coarse, cfg.grid.fine_dt);
    const ParticleMatrix x0 = initial.sample(cfg.ensemble_size, ss.initial, Stream::initial);

    std::vector<std::vector<double>> per_filter(cfg.filters.size());
    for (double delta : deltas) {
      const ObservationPath path(make_grid(cfg, delta), sim.path.z(), sim.path.seed());
      for (std::size_t f = 0; f < cfg.filters.size(); ++f) {
        const FilterConfig& fc = cfg.filters[f];
        const FilterRun run =
            run_isolated(fc.spec, model, path, x0, fc.seed.value_or(ss.particles), true);
        const double e = strided_rmse(run, 1, *ref, 1, fine_steps);
        const double em = strided_rmse(run, coarse_stride, *ref, coarse_stride, points);
        rep.rows.push_back({"delta", delta, seed, fc.spec.name(), e, em, run.ok()});
        per_filter[f].push_back(e);
      }
    }
    std::vector<double> index(deltas.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<double>(i);
    for (std::size_t f = 0; f < cfg.filters.size(); ++f) {
      rep.trends.push_back(trend_of("delta", cfg.filters[f].spec.name(), seed, index, per_filter[f]));
    }
  }
  return rep;
}

SweepReport run_ensemble_sweep(const ExperimentConfig& cfg) {
  std::vector<std::size_t> sizes = cfg.sweep.ensemble_sizes;
  if (sizes.empty()) sizes.push_back(cfg.ensemble_size);
  std::sort(sizes.begin(), sizes.end());
  const SystemModel model = build_model(cfg);
  const InitialDensity initial = build_initial(cfg);
  std::vector<std::uint64_t> seeds = cfg.sweep.seeds;
  if (seeds.empty()) seeds.push_back(cfg.seeds.base);
  const TimeGrid grid = make_grid(cfg, cfg.grid.delta);

  SweepReport rep;
  for (std::uint64_t seed : seeds) {
    SeedConfig sc;
    sc.base = seed;
    if (cfg.sweep.seeds.empty()) sc = cfg.seeds;
    const SeedSet ss = resolve_seeds(sc);
    const SimulatedPath sim = simulate_path(model, initial, grid, ss);
    const auto smooth = compute_reference(cfg, model, sim.path, false);
    const auto raw = compute_reference(cfg, model, sim.path, true);
    if (!smooth || !raw) throw Error(ErrorCode::model_mismatch, "ensemble sweep needs a reference solution");

    std::vector<std::vector<double>> per_filter(cfg.filters.size());
    for (std::size_t n : sizes) {
      const ParticleMatrix x0 = initial.sample(n, ss.initial, Stream::initial);
      for (std::size_t f = 0; f < cfg.filters.size(); ++f) {
        const FilterConfig& fc = cfg.filters[f];
        const FilterRun run = run_isolated(fc.spec, model, sim.path, x0, fc.seed.value_or(ss.particles));
        const ReferenceSeries& ref = fc.spec.raw_increments ? *raw : *smooth;
        const double e = strided_rmse(run, 1, ref, 1, grid.mesh_steps());
        rep.rows.push_back({"N", static_cast<double>(n), seed, fc.spec.name(), e, e, run.ok()});
        per_filter[f].push_back(e);
      }
    }
    std::vector<double> ns(sizes.begin(), sizes.end());
    for (std::size_t f = 0; f < cfg.filters.size(); ++f) {
      rep.trends.push_back(trend_of("N", cfg.filters[f].spec.name(), seed, ns, per_filter[f]));
    }
  }
  return rep;
}

TheoryReport run_theory(const ExperimentConfig& cfg) {
  const SystemModel model = build_model(cfg);
  const auto& report = model.condition_report();
  auto pick = [&](const std::optional<double>& given, std::optional<double> certified,
                  const char* name) {
    if (given) return *given;
    if (certified && *certified > 0.0 && std::isfinite(*certified)) return *certified;
    throw ConfigError(std::string("theory.") + name,
                      "not given and not certified by the model's condition report");
  };
  std::optional<double> cu, cg, cr;
  if (report) {
    cu = report->certified_c_u;
    cg = report->certified_c_g;
    cr = report->certified_c_r;
  }
  const double c_u = pick(cfg.theory.c_u, cu, "c_u");
  const double c_g = pick(cfg.theory.c_g, cg, "c_g");
  const double c_r = pick(cfg.theory.c_r, cr, "c_r");
  const double tol = cfg.theory.tolerance;

  TheoryReport rep;
  const PoincareBound bound = kappa_continuous(c_u, c_g, c_r);
  rep.rows.push_back({"posterior_bound", std::string(to_string(bound.provenance)),
                      inputs_string(bound.inputs), bound.constant, std::nullopt, std::nullopt,
                      true, ""});

  GammaTrace trace = gamma_recursion(c_g, c_r, cfg.theory.gamma_dt, cfg.theory.gamma_steps);
  {
    const double floor = std::min(c_g, trace.fixed_point);
    TheoryRow row;
    row.name = "discrete_posterior_bound";
    row.provenance = "gamma_recursion";
    row.inputs = inputs_string({{"c_u", c_u}, {"c_g", c_g}, {"c_r", c_r},
                                {"dt", cfg.theory.gamma_dt},
                                {"steps", static_cast<double>(cfg.theory.gamma_steps)}});
    row.kappa = 1.0 / (c_u + trace.minimum);
    row.passed = trace.fixed_point_residual <= 1e-12 && trace.monotone() &&
                 trace.minimum >= floor - 1e-12;
    row.note = "gamma_star=" + format_double(trace.fixed_point) +
               ";min_gamma=" + format_double(trace.minimum);
    rep.rows.push_back(row);
  }
  rep.gamma = std::move(trace);

  if (model.dim() != 1) return rep;

  // Prior-based certificates.
  const Density1D prior = prior_table(cfg);
  const EmpiricalPoincare prior_emp = empirical_poincare_1d(prior);
  PoincareBound base{prior_emp.kappa, BoundProvenance::empirical, {{"prior_var", cfg.initial_cov(0, 0)}}, {}};
  for (double lip : cfg.theory.lipschitz) {
    const PoincareBound t = lipschitz_transfer(base, lip);
    Density1D pushed{{prior.grid.x0 * lip, prior.grid.dx * lip, prior.grid.n}, prior.values, {}};
    for (double& v : pushed.values) v /= lip;
    const EmpiricalPoincare emp = empirical_poincare_1d(pushed);
    TheoryRow row;
    row.name = "lipschitz_transfer_" + format_double(lip);
    row.provenance = std::string(to_string(t.provenance));
    auto in = t.inputs;
    in.emplace_back("stated_constant", *t.stated_constant);
    row.inputs = inputs_string(in);
    row.kappa = t.constant;
    row.kappa_emp = emp.kappa;
    row.margin = t.constant - emp.kappa;
    row.passed = emp.certified && std::abs(emp.kappa / t.constant - 1.0) <= tol;
    rep.rows.push_back(row);
  }
  try {
    const BrascampLiebReport bl =
        brascamp_lieb_check(prior, [](double x) { return x; }, [](double) { return 1.0; });
    rep.rows.push_back({"brascamp_lieb_prior_linear", "brascamp_lieb", "f=x", bl.bound, bl.variance,
                        bl.bound - bl.variance, bl.passed,
                        "min_curvature=" + format_double(bl.min_curvature)});
  } catch (const NotLogConcave& e) {
    rep.rows.push_back({"brascamp_lieb_prior_linear", "brascamp_lieb", "f=x",
                        std::numeric_limits<double>::quiet_NaN(), std::nullopt, std::nullopt,
                        false, e.what()});
  }

  if (!cfg.reference.enabled) return rep;

  // Posterior certificates along one simulated path.
  const SeedSet seeds = resolve_seeds(cfg.seeds);
  const TimeGrid grid = make_grid(cfg, cfg.grid.delta);
  const SimulatedPath sim = simulate_path(model, build_initial(cfg), grid, seeds);
  std::vector<double> times = cfg.theory.posterior_times;
  times.push_back(cfg.grid.T);
  std::sort(times.begin(), times.end());
  const Density1D start = gaussian_table(reference_grid(cfg), cfg.initial_mean[0], cfg.initial_cov(0, 0));
  const GridKushnerRun run = run_grid_kushner(model, start, sim.path, false, times);

  for (std::size_t i = 0; i < cfg.theory.posterior_times.size(); ++i) {
    const double t = cfg.theory.posterior_times[i];
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    const auto& snap = run.snapshots.at(static_cast<std::size_t>(it - times.begin()));
    const EmpiricalPoincare emp = empirical_poincare_1d(positive_window(snap.as_density()));
    TheoryRow row;
    row.name = "posterior_t=" + format_double(t);
    row.provenance = std::string(to_string(BoundProvenance::empirical));
    row.inputs = inputs_string(bound.inputs);
    row.kappa = bound.constant;
    row.kappa_emp = emp.kappa;
    row.margin = bound.constant - emp.kappa;
    row.passed = emp.certified && emp.kappa <= bound.constant * (1.0 + tol);
    rep.rows.push_back(row);
  }

  const ModelBounds& mb = model.bounds();
  if (mb.drift_lipschitz && mb.obs_sup && mb.obs_sq_sup) {
    double max_dz = 0.0;
    for (std::size_t n = 0; n < grid.mesh_steps(); ++n) {
      max_dz = std::max(max_dz, std::abs(sim.path.knot_increment(n)));
    }
    const KappaDelta kd = kappa_delta(prior_emp.kappa, cfg.grid.T - cfg.grid.t0, *mb.drift_lipschitz,
                                      *mb.obs_sup, *mb.obs_sq_sup, cfg.grid.delta, max_dz);
    const EmpiricalPoincare emp = empirical_poincare_1d(positive_window(run.snapshots.back().as_density()));
    rep.rows.push_back({"smoothed_posterior_bound", std::string(to_string(kd.bound.provenance)),
                        inputs_string(kd.bound.inputs), kd.bound.constant, emp.kappa,
                        kd.bound.constant - emp.kappa, emp.kappa <= kd.bound.constant, ""});
    rep.rows.push_back({"signal_only_bound", std::string(to_string(kd.bound.provenance)),
                        inputs_string(kd.bound.inputs), kd.signal_only, std::nullopt, std::nullopt,
                        true, "exp(2 L T)(kappa0 + T)"});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Tables

CsvTable series_table(const RunReport& r) {
  CsvTable t;
  const std::size_t d = r.dim;
  t.header = {"schema_version", "t", "filter"};
  for (std::size_t i = 0; i < d; ++i) t.header.push_back("mean_" + std::to_string(i + 1));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      t.header.push_back("cov_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    }
  }
  t.header.push_back("h_bar");
  t.header.push_back("err_mean");
  t.header.push_back("err_cov");
  auto row = [&](double time, const std::string& name, const Vector& m, const Matrix& c,
                 std::optional<double> hb, std::optional<double> em, std::optional<double> ec) {
    std::vector<std::string> out{version_field(), format_double(time), name};
    for (std::size_t i = 0; i < d; ++i) out.push_back(format_double(m[static_cast<Eigen::Index>(i)]));
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        out.push_back(format_double(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
      }
    }
    out.push_back(opt_field(hb));
    out.push_back(opt_field(em));
    out.push_back(opt_field(ec));
    t.rows.push_back(std::move(out));
  };
  for (const auto& ref : r.references) {
    for (std::size_t i = 0; i < ref.times.size(); ++i) {
      row(ref.times[i], ref.name, ref.means[i], ref.covs[i], std::nullopt, std::nullopt,
          std::nullopt);
    }
  }
  for (const auto& f : r.filters) {
    for (std::size_t i = 0; i < f.run.times.size(); ++i) {
      std::optional<double> em, ec;
      if (i < f.err_mean.size()) {
        em = f.err_mean[i];
        ec = f.err_cov[i];
      }
      const Moments& m = f.run.moments[i];
      row(f.run.times[i], f.run.spec.name(), m.mean, m.cov, m.h_bar, em, ec);
    }
  }
  return t;
}

CsvTable summary_table(const RunReport& r) {
  CsvTable t;
  t.header = {"schema_version", "filter", "kind", "gain", "status", "error_code", "failed_step",
              "reference", "mean_err_avg", "var_ratio_err_avg", "rmse_mean", "terminal_err_mean",
              "max_residual", "max_condition", "max_tail", "floor_active", "degenerate_steps",
              "slope_checksum", "seed"};
  for (const auto& f : r.filters) {
    const FilterRun& run = f.run;
    t.rows.push_back({version_field(), run.spec.name(), std::string(to_string(run.spec.kind)),
                      std::string(to_string(run.spec.gain.method)), run.ok() ? "ok" : "failed",
                      run.ok() ? "" : std::string(to_string(*run.failure_code)),
                      run.ok() ? "" : std::to_string(run.failed_step), f.reference,
                      f.reference.empty() ? "" : format_double(f.mean_err_avg),
                      f.reference.empty() ? "" : format_double(f.var_ratio_err_avg),
                      f.reference.empty() ? "" : format_double(f.rmse_mean),
                      f.reference.empty() ? "" : format_double(f.terminal_err_mean),
                      format_double(f.max_residual), format_double(f.max_condition),
                      format_double(f.max_tail), std::to_string(f.floor_active),
                      std::to_string(f.degenerate_steps), hex(r.slope_checksum),
                      std::to_string(r.seed)});
  }
  return t;
}

CsvTable gain_log_table(const RunReport& r) {
  CsvTable t;
  t.header = {"schema_version", "filter", "step", "t", "method", "residual", "centring",
              "condition", "epsilon", "tail", "bandwidth", "floor_active", "degenerate_density"};
  for (const auto& f : r.filters) {
    const std::string name = f.run.spec.name();
    for (const auto& e : f.run.step_log) {
      const GainDiagnostics& g = e.diagnostics;
      t.rows.push_back({version_field(), name, std::to_string(e.step), format_double(e.t), g.method,
                        format_double(g.residual), format_double(g.centring),
                        format_double(g.condition), format_double(g.epsilon),
                        format_double(g.tail), format_double(g.bandwidth),
                        std::to_string(g.floor_active), g.degenerate_density ? "1" : "0"});
    }
  }
  return t;
}

CsvTable sweep_table(const SweepReport& r) {
  CsvTable t;
  t.header = {"schema_version", "sweep", "delta_or_N", "seed", "filter", "rmse", "rmse_mesh",
              "status"};
  for (const auto& row : r.rows) {
    t.rows.push_back({version_field(), row.sweep, format_double(row.delta_or_n),
                      std::to_string(row.seed), row.filter, format_double(row.rmse),
                      format_double(row.rmse_mesh), row.ok ? "ok" : "failed"});
  }
  return t;
}

CsvTable sweep_trend_table(const SweepReport& r) {
  CsvTable t;
  t.header = {"schema_version", "sweep", "filter", "seed", "spearman", "monotone", "trend"};
  for (const auto& tr : r.trends) {
    t.rows.push_back({version_field(), tr.sweep, tr.filter, std::to_string(tr.seed),
                      opt_field(tr.spearman), tr.monotone ? "1" : "0", tr.trend});
  }
  return t;
}

CsvTable theory_table(const TheoryReport& r) {
  CsvTable t;
  t.header = {"schema_version", "name", "provenance", "inputs", "kappa", "kappa_emp", "margin",
              "passed", "note"};
  for (const auto& row : r.rows) {
    t.rows.push_back({version_field(), row.name, row.provenance, row.inputs,
                      format_double(row.kappa), opt_field(row.kappa_emp), opt_field(row.margin),
                      row.passed ? "1" : "0", row.note});
  }
  return t;
}

CsvTable gamma_table(const TheoryReport& r) {
  CsvTable t;
  t.header = {"schema_version", "i", "gamma", "fixed_point", "dt", "c_g", "c_r"};
  if (!r.gamma) return t;
  const GammaTrace& g = *r.gamma;
  for (std::size_t i = 0; i < g.gamma.size(); ++i) {
    t.rows.push_back({version_field(), std::to_string(i), format_double(g.gamma[i]),
                      format_double(g.fixed_point), format_double(g.dt), format_double(g.c_g),
                      format_double(g.c_r)});
  }
  return t;
}

void emit_run(const RunReport& r, const std::string& dir) {
  ensure_dir(dir);
  const std::filesystem::path p(dir);
  write_csv_file((p / "series.csv").string(), series_table(r));
  write_csv_file((p / "summary.csv").string(), summary_table(r));
  write_csv_file((p / "gain_log.csv").string(), gain_log_table(r));
  if (r.simulated) {
    const ObservationPath& path = r.simulated->path;
    write_csv_file((p / "path.csv").string(), path_table(path.grid(), r.simulated->truth, path));
    write_csv_file((p / "knots.csv").string(), knots_table(path));
  }
}

void emit_sweep(const SweepReport& r, const std::string& dir, const std::string& stem) {
  ensure_dir(dir);
  const std::filesystem::path p(dir);
  write_csv_file((p / (stem + ".csv")).string(), sweep_table(r));
  write_csv_file((p / (stem + "_trend.csv")).string(), sweep_trend_table(r));
}

void emit_theory(const TheoryReport& r, const std::string& dir) {
  ensure_dir(dir);
  const std::filesystem::path p(dir);
  write_csv_file((p / "theory.csv").string(), theory_table(r));
  write_csv_file((p / "gamma.csv").string(), gamma_table(r));
}

}  // namespace flowfilter
