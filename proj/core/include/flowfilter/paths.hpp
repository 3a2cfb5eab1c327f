// Ground-truth simulation and the piecewise-linear observation path
//
//   Z^delta_t = Z_{t_n} + (Z_{t_{n+1}} - Z_{t_n}) (t - t_n) / delta,  t in [t_n, t_{n+1}).
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/csv.hpp"
#include "flowfilter/models.hpp"
#include "flowfilter/rng.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace flowfilter {

/// Fine integrator grid nested inside the observation mesh.
class TimeGrid {
 public:
  TimeGrid(double t0, double T, double fine_dt, double delta);

  double t0() const noexcept { return t0_; }
  double T() const noexcept { return T_; }
  double fine_dt() const noexcept { return fine_dt_; }
  double delta() const noexcept { return delta_; }

  std::size_t fine_steps() const noexcept { return mesh_steps_ * per_mesh_; }
  std::size_t mesh_steps() const noexcept { return mesh_steps_; }
  std::size_t fine_per_mesh() const noexcept { return per_mesh_; }

  double fine_time(std::size_t k) const noexcept {
    return t0_ + static_cast<double>(k) * fine_dt_;
  }
  double mesh_time(std::size_t n) const noexcept {
    return t0_ + static_cast<double>(n) * delta_;
  }
  std::size_t mesh_of_fine(std::size_t k) const noexcept { return k / per_mesh_; }

 private:
  double t0_, T_, fine_dt_, delta_;
  std::size_t per_mesh_ = 1;
  std::size_t mesh_steps_ = 0;
};

struct TruthTrajectory {
  /// (fine_steps + 1) x d, row k at fine_time(k).
  ParticleMatrix states;
  std::optional<std::uint64_t> seed;
};

class ObservationPath {
 public:
  /// From a fine-grid realisation z (length fine_steps + 1, z[0] = Z_{t0}).
  ObservationPath(const TimeGrid& grid, std::vector<double> z,
                  std::optional<std::uint64_t> seed = {});
  /// From mesh knots only; the fine values are the interpolant Z^delta.
  static ObservationPath from_knots(const TimeGrid& grid, std::vector<double> knots);

  const TimeGrid& grid() const noexcept { return grid_; }
  const std::vector<double>& z() const noexcept { return z_; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& slopes() const noexcept { return slopes_; }
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }

  /// Raw fine-grid increment Z_{k+1} - Z_k.
  double increment(std::size_t k) const;
  /// Mesh increment Z_{t_{n+1}} - Z_{t_n}.
  double knot_increment(std::size_t n) const;

 private:
  TimeGrid grid_;
  std::vector<double> z_;
  std::vector<double> knots_;
  std::vector<double> slopes_;
  std::optional<std::uint64_t> seed_;
};

/// Euler-Maruyama: X_{k+1} = X_k + M(X_k) dt + dV_k, with dV_k drawn from
/// `noise` at (step k, index 0). Throws NonFiniteState with the step index.
TruthTrajectory simulate_truth(const SystemModel& model, const TimeGrid& grid,
                               std::span<const double> x0,
                               const IncrementSource& noise,
                               std::optional<std::uint64_t> seed = {});

/// Z_{k+1} = Z_k + h(X_k) dt + dW_k with Z_{t0} = 0.
ObservationPath simulate_observations(const SystemModel& model,
                                      const TruthTrajectory& truth,
                                      const TimeGrid& grid,
                                      const IncrementSource& noise,
                                      std::optional<std::uint64_t> seed = {});

/// Z^delta_t. The right endpoint returns Z_T; throws OutOfRange outside [t0, T].
double smoothed_value(const ObservationPath& path, double t);

/// Y_n = (Z_{t_{n+1}} - Z_{t_n}) / delta. Throws OutOfRange for n >= N.
double discrete_observation(const ObservationPath& path, std::size_t n);

/// Total variation of Z^delta over the horizon (sum of |knot increments|).
double smoothed_total_variation(const ObservationPath& path);

/// FNV-1a hash of the slope array bytes, used to show filters shared a path.
std::uint64_t slope_checksum(const ObservationPath& path);

// CSV round trip: fine table (t, x_1..x_d, z) and knots table
// (n, t_n, z_knot, slope; the final knot has an empty slope).
CsvTable path_table(const TimeGrid& grid, const TruthTrajectory& truth,
                    const ObservationPath& path);
CsvTable knots_table(const ObservationPath& path);

struct PathRecord {
  std::vector<double> t;
  ParticleMatrix x;
  std::vector<double> z;
};
PathRecord parse_path_table(const CsvTable& table);
/// Rebuilds an ObservationPath from a knots table on the given grid.
ObservationPath parse_knots_table(const CsvTable& table, const TimeGrid& grid);

}  // namespace flowfilter
