#include "flowfilter/reference.hpp"

#include "flowfilter/numerics.hpp"

#include <cmath>
#include <sstream>

namespace flowfilter {

KalmanBucyState kalman_bucy_step(const KalmanBucyState& s, const Matrix& A,
                                 const RowVector& H, double dy, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::non_positive_delta, "Kalman-Bucy step needs dt > 0");
  const auto d = s.mean.size();
  if (A.rows() != d || A.cols() != d || H.size() != d || s.cov.rows() != d) {
    throw Error(ErrorCode::invalid_argument, "Kalman-Bucy dimensions do not match");
  }
  const Vector PHt = s.cov * H.transpose();
  KalmanBucyState out;
  out.mean = s.mean + (A * s.mean) * dt + PHt * (dy - H.dot(s.mean.transpose()) * dt);
  const Matrix I = Matrix::Identity(d, d);
  out.cov = s.cov + (A * s.cov + s.cov * A.transpose() + I - PHt * PHt.transpose()) * dt;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  if (!out.mean.allFinite() || !out.cov.allFinite()) {
    throw Error(ErrorCode::non_finite_state, "Kalman-Bucy state became non-finite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().maxCoeff() > 1e8) {
    throw Error(ErrorCode::covariance_blowup, "Kalman-Bucy covariance eigenvalue exceeds 1e8");
  }
  return out;
}

KalmanBucyRun run_kalman_bucy(const Matrix& A, const RowVector& H,
                              const KalmanBucyState& initial, const ObservationPath& path,
                              bool raw_increments, bool record_fine) {
  const TimeGrid& g = path.grid();
  const std::size_t r = g.fine_per_mesh();
  const double dt = g.fine_dt();
  KalmanBucyRun run;
  KalmanBucyState s = initial;
  run.times.push_back(g.t0());
  run.states.push_back(s);
  for (std::size_t k = 0; k < g.fine_steps(); ++k) {
    const std::size_t n = g.mesh_of_fine(k);
    const double dy = raw_increments ? path.increment(k) : path.slopes()[n] * dt;
    s = kalman_bucy_step(s, A, H, dy, dt);
    if ((k + 1) % r == 0) {
      run.times.push_back(g.mesh_time(n + 1));
      run.states.push_back(s);
    } else if (record_fine) {
      run.times.push_back(g.fine_time(k + 1));
      run.states.push_back(s);
    }
  }
  return run;
}

GridDensity make_grid_density(const Density1D& d, double t0) {
  GridDensity g{d.grid, d.values, t0};
  const double m = g.mass();
  if (!(m > 0.0)) throw Error(ErrorCode::non_positive_density, "grid density has no mass");
  for (double& v : g.values) v /= m;
  return g;
}

double kushner_stable_dt(const UniformGrid& grid) { return 0.4 * grid.dx * grid.dx; }

GridDensity grid_kushner_step(const GridDensity& dens, const SystemModel& model,
                              double slope, double dt) {
  if (model.dim() != 1) throw Error(ErrorCode::dimension_error, "grid solver needs d = 1");
  const UniformGrid& g = dens.grid;
  const std::size_t n = g.n;
  if (n < 3 || dens.values.size() != n) {
    throw Error(ErrorCode::invalid_argument, "grid density is malformed");
  }
  if (!(dt > 0.0)) throw Error(ErrorCode::non_positive_delta, "grid step needs dt > 0");
  if (dt > kushner_stable_dt(g) * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "dt = " << dt << " exceeds the explicit bound 0.4 dx^2 = " << kushner_stable_dt(g);
    throw Error(ErrorCode::cfl_violation, os.str());
  }
  const std::vector<double>& th = dens.values;
  const double width = g.x_end() - g.x0;
  const double tail = (std::abs(th.front()) + std::abs(th.back())) * width;
  if (tail > 1e-6) {
    std::ostringstream os;
    os << "grid density reaches the boundary (edge mass indicator " << tail << ")";
    throw Error(ErrorCode::unresolved_tail, os.str());
  }

  std::vector<double> m(n), h(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g.x(i);
    model.drift({&x, 1}, {&m[i], 1});
    h[i] = model.obs({&x, 1});
  }
  const double mass = trapezoid(th, g.dx);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = h[i] * th[i];
  const double hbar = trapezoid(tmp, g.dx) / mass;
  for (std::size_t i = 0; i < n; ++i) tmp[i] = h[i] * h[i] * th[i];
  const double h2bar = trapezoid(tmp, g.dx) / mass;

  // Fluxes at cell faces i+1/2; zero at the two boundaries.
  std::vector<double> flux(n + 1, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double adv = 0.5 * (m[i] * th[i] + m[i + 1] * th[i + 1]);
    const double dif = 0.5 * (th[i + 1] - th[i]) / g.dx;
    flux[i + 1] = adv - dif;
  }
  GridDensity out = dens;
  out.time = dens.time + dt;
  double lowest = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double transport = -(flux[i + 1] - flux[i]) / g.dx;
    const double rate = -0.5 * (h[i] * h[i] - h2bar) + (h[i] - hbar) * slope;
    out.values[i] = (th[i] + dt * transport) * std::exp(dt * rate);
    lowest = std::min(lowest, out.values[i]);
  }
  if (lowest < -1e-10) {
    ++out.negative_events;
    out.min_before_clip = std::min(out.min_before_clip, lowest);
  }
  for (double& v : out.values) v = std::max(v, 0.0);
  const double new_mass = out.mass();
  if (!(new_mass > 0.0) || !std::isfinite(new_mass)) {
    throw Error(ErrorCode::non_finite_state, "grid density lost its mass");
  }
  out.max_renormalisation = std::max(out.max_renormalisation, std::abs(new_mass - 1.0));
  for (double& v : out.values) v /= new_mass;
  return out;
}

GridKushnerRun run_grid_kushner(const SystemModel& model, const Density1D& initial,
                                const ObservationPath& path, bool fine_slopes,
                                const std::vector<double>& snapshot_times,
                                bool record_fine) {
  const TimeGrid& tg = path.grid();
  const std::size_t r = tg.fine_per_mesh();
  const double dt = tg.fine_dt();
  GridDensity cur = make_grid_density(initial, tg.t0());
  const auto sub = static_cast<std::size_t>(std::ceil(dt / kushner_stable_dt(cur.grid) - 1e-12));
  const std::size_t substeps = std::max<std::size_t>(1, sub);
  const double h = dt / static_cast<double>(substeps);

  GridKushnerRun run;
  std::size_t next_snap = 0;
  auto record_snapshots = [&](double t) {
    while (next_snap < snapshot_times.size() &&
           snapshot_times[next_snap] <= t + 1e-12 * std::max(1.0, std::abs(t))) {
      run.snapshots.push_back(cur);
      ++next_snap;
    }
  };
  auto record = [&](double t) {
    const Density1D d = cur.as_density();
    run.times.push_back(t);
    run.means.push_back(d.mean());
    run.variances.push_back(d.variance());
  };
  record(tg.t0());
  record_snapshots(tg.t0());
  for (std::size_t k = 0; k < tg.fine_steps(); ++k) {
    const std::size_t n = tg.mesh_of_fine(k);
    const double slope = fine_slopes ? path.increment(k) / dt : path.slopes()[n];
    for (std::size_t s = 0; s < substeps; ++s) cur = grid_kushner_step(cur, model, slope, h);
    cur.time = tg.fine_time(k + 1);
    if ((k + 1) % r == 0) {
      record(tg.mesh_time(n + 1));
    } else if (record_fine) {
      record(tg.fine_time(k + 1));
    }
    record_snapshots(tg.fine_time(k + 1));
  }
  run.final_density = cur;
  return run;
}

DensityDistance density_distance(const GridDensity& a, const GridDensity& b) {
  if (!(a.grid == b.grid) || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::grid_mismatch, "densities live on different grids");
  }
  std::vector<double> diff(a.values.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::abs(a.values[i] - b.values[i]);
  const Density1D da = a.as_density(), db = b.as_density();
  return {trapezoid(diff, a.grid.dx), std::abs(da.mean() - db.mean()),
          std::abs(da.variance() - db.variance())};
}

CsvTable grid_density_table(const GridDensity& d) {
  CsvTable t;
  t.header = {"x", "theta"};
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    t.rows.push_back({format_double(d.grid.x(i)), format_double(d.values[i])});
  }
  return t;
}

}  // namespace flowfilter
