// Particle clouds and the empirical statistics the filter coefficients use.
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/csv.hpp"
#include "flowfilter/grid.hpp"
#include "flowfilter/models.hpp"

#include <optional>

namespace flowfilter {

/// Floor applied to density values before dividing by them.
inline constexpr double kDensityFloor = 1e-8;

class Ensemble {
 public:
  /// Requires N >= 2 and finite entries.
  explicit Ensemble(ParticleMatrix particles);

  const ParticleMatrix& particles() const noexcept { return x_; }
  /// Direct access for the particle update; callers keep entries finite.
  ParticleMatrix& particles_mut() noexcept { return x_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(x_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(x_.cols()); }

 private:
  ParticleMatrix x_;
};

struct Moments {
  Vector mean;
  Matrix cov;     // 1/(N-1) normalisation
  double h_bar = 0.0;
  double h2_bar = 0.0;
  Vector cov_xh;  // 1/(N-1) normalisation
};

/// Observation values h(x_i) in particle order.
std::vector<double> observe(const Ensemble& ens, const SystemModel& model);

Moments compute_moments(const Ensemble& ens, const SystemModel& model);
/// Same, reusing precomputed h(x_i).
Moments compute_moments(const Ensemble& ens, std::span<const double> h);

/// Unbiased sample covariance of two per-particle scalars.
double sample_cov(std::span<const double> a, std::span<const double> b);
/// Unbiased sample covariance of each coordinate with a per-particle scalar.
Vector sample_cov_x(const Ensemble& ens, std::span<const double> values);

enum class KdeEvaluation { automatic, exact, binned };

struct KdeOptions {
  /// Fixed bandwidth; Silverman's rule 1.06 sigma N^{-1/5} when empty.
  std::optional<double> bandwidth;
  /// Lower bound for the grid half-width L (the grid is [-L, L]).
  double min_half_width = 0.0;
  std::size_t points = 4001;
  /// automatic: exact sums when N * points <= 4e6, linear binning otherwise.
  KdeEvaluation evaluation = KdeEvaluation::automatic;
};

double silverman_bandwidth(double sd, std::size_t n);

/// Gaussian-kernel density on [-L, L], L = max(|mean| + 8 sd, min_half_width),
/// renormalised to unit trapezoidal mass. DegenerateCloud if var < 1e-14.
Density1D kde_density_1d(const Ensemble& ens, const KdeOptions& opts = {});

struct GaussianFit {
  Vector mean;
  Matrix cov;
  bool regularised = false;
};

/// Sample mean and covariance; adds 1e-12 I when the covariance is singular.
GaussianFit gaussian_fit(const Ensemble& ens);

/// Gaussian fit of a 1D cloud tabulated on the same kind of grid as the KDE.
Density1D gaussian_density_1d(const Ensemble& ens, const KdeOptions& opts = {});

CsvTable ensemble_table(const Ensemble& ens);
CsvTable density_table(const Density1D& density);

}  // namespace flowfilter
