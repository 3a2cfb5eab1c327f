// Reference solutions: Kalman-Bucy recursions for linear-Gaussian models and
// an explicit finite-difference solver for the smoothed Kushner-Stratonovich
// equation in d = 1,
//
//   d theta = (L* theta - (h^2 - h2_bar) theta / 2) dt + (h - h_bar) theta dZ^delta.
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/grid.hpp"
#include "flowfilter/models.hpp"
#include "flowfilter/paths.hpp"

#include <vector>

namespace flowfilter {

struct KalmanBucyState {
  Vector mean;
  Matrix cov;
};

/// Euler step of dm = A m dt + P H^T (dy - H m dt),
/// dP = (A P + P A^T + I - P H^T H P) dt, then P <- (P + P^T)/2.
/// CovarianceBlowup if an eigenvalue exceeds 1e8.
KalmanBucyState kalman_bucy_step(const KalmanBucyState& s, const Matrix& A,
                                 const RowVector& H, double dy, double dt);

struct KalmanBucyRun {
  std::vector<double> times;  // mesh times
  std::vector<KalmanBucyState> states;
};

/// Integrates over the fine grid of `path`, driven by slope * dt (the
/// smoothed path) or by the raw fine increments, recording mesh points (or
/// every fine step with record_fine).
KalmanBucyRun run_kalman_bucy(const Matrix& A, const RowVector& H,
                              const KalmanBucyState& initial,
                              const ObservationPath& path, bool raw_increments,
                              bool record_fine = false);

struct GridDensity {
  UniformGrid grid;
  std::vector<double> values;
  double time = 0.0;
  /// Most negative value seen before clipping, and how many steps clipped
  /// below -1e-10.
  double min_before_clip = 0.0;
  std::size_t negative_events = 0;
  /// Largest |mass - 1| removed by renormalisation so far.
  double max_renormalisation = 0.0;

  double mass() const { return trapezoid(values, grid.dx); }
  Density1D as_density() const { return {grid, values, std::nullopt}; }
};

GridDensity make_grid_density(const Density1D& d, double t0 = 0.0);

/// Largest explicit step allowed on the grid: 0.4 dx^2.
double kushner_stable_dt(const UniformGrid& grid);

/// One explicit step. CFLViolation if dt > 0.4 dx^2; UnresolvedTail if the
/// boundary cells carry more than 1e-6 of mass; renormalises afterwards.
GridDensity grid_kushner_step(const GridDensity& dens, const SystemModel& model,
                              double slope, double dt);

struct GridKushnerRun {
  std::vector<double> times;  // mesh times
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<GridDensity> snapshots;  // at snapshot_times, in order
  GridDensity final_density;
};

/// Drives the grid solver along `path`. With fine_slopes the slope of each
/// fine interval (dZ_k / fine_dt) is used, which approximates the
/// unsmoothed filter; otherwise the mesh slope. Each fine step is split
/// into equal substeps satisfying the stability bound. Moments are recorded
/// at mesh points, or every fine step with record_fine.
GridKushnerRun run_grid_kushner(const SystemModel& model, const Density1D& initial,
                                const ObservationPath& path, bool fine_slopes,
                                const std::vector<double>& snapshot_times = {},
                                bool record_fine = false);

struct DensityDistance {
  double l1 = 0.0;
  double mean_diff = 0.0;
  double var_diff = 0.0;
};

/// GridMismatch unless both densities live on the same grid.
DensityDistance density_distance(const GridDensity& a, const GridDensity& b);

CsvTable grid_density_table(const GridDensity& d);

}  // namespace flowfilter
