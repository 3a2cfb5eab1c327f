// Poisson-equation solvers for the filter coefficients
//
//   div(rho grad phi) = -(h - h_bar) rho,      gain K = grad phi,
//
// plus the psi, Omega, alpha and beta variants, and the assembly of each
// filter's drift/gain pair from them.
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/ensemble.hpp"
#include "flowfilter/grid.hpp"
#include "flowfilter/models.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowfilter {

enum class PoissonKind {
  fpf_phi,       // div(rho grad phi)   = -(h - h_bar) rho
  fpf_psi,       // div(rho grad psi)   =  (r - r_bar) rho,   r = grad h . K
  reich_omega,   // div(rho grad Omega) =  (h^2 - h2_bar) rho / 2
  crisan_beta,   // lap beta            = -(h - h_bar) rho,   K = grad beta / rho
  crisan_alpha,  // lap alpha           =  (h^2 - h2_bar) rho / 2, a = grad alpha / rho
};

enum class MassMatrix { identity, rho_identity, cov_inverse };

std::string_view to_string(PoissonKind k) noexcept;
std::string_view to_string(MassMatrix m) noexcept;

struct GainDiagnostics {
  std::string method;
  /// Linear-solve residual (Galerkin) or sup-norm divergence residual (grid).
  double residual = 0.0;
  /// |mean of the potential| after centring.
  double centring = 0.0;
  double condition = 1.0;
  /// Kernel cutoff (fundamental solution) or density floor in use.
  double epsilon = 0.0;
  /// Grid truncation indicator of the 1D solver.
  double tail = 0.0;
  double bandwidth = 0.0;
  /// Particles at which the density floor was active.
  std::size_t floor_active = 0;
  bool degenerate_density = false;
};

/// Vector field on R^d. jacobian() fills J row-major with J(i, j) = dK_i/dx_j.
class Field {
 public:
  virtual ~Field() = default;
  virtual std::size_t dim() const = 0;
  virtual void value(std::span<const double> x, std::span<double> out) const = 0;
  /// Default: central differences of value().
  virtual void jacobian(std::span<const double> x, std::span<double> out) const;
};

class ConstantField final : public Field {
 public:
  explicit ConstantField(Vector k) : k_(std::move(k)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(k_.size()); }
  void value(std::span<const double>, std::span<double> out) const override;
  void jacobian(std::span<const double>, std::span<double> out) const override;
  const Vector& constant() const noexcept { return k_; }

 private:
  Vector k_;
};

/// x -> G x + c.
class AffineField final : public Field {
 public:
  AffineField(Matrix G, Vector c) : G_(std::move(G)), c_(std::move(c)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(c_.size()); }
  void value(std::span<const double> x, std::span<double> out) const override;
  void jacobian(std::span<const double>, std::span<double> out) const override;

 private:
  Matrix G_;
  Vector c_;
};

/// Scalar field tabulated on a 1D grid, linear interpolation (clamped
/// outside), derivative from second-order differences of the table.
class GridField1D final : public Field {
 public:
  GridField1D(UniformGrid grid, std::vector<double> values);
  std::size_t dim() const override { return 1; }
  void value(std::span<const double> x, std::span<double> out) const override;
  void jacobian(std::span<const double> x, std::span<double> out) const override;
  const UniformGrid& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  UniformGrid grid_;
  std::vector<double> values_;
  std::vector<double> slope_;
};

class ScaledField final : public Field {
 public:
  ScaledField(std::shared_ptr<const Field> f, double s) : f_(std::move(f)), s_(s) {}
  std::size_t dim() const override { return f_->dim(); }
  void value(std::span<const double> x, std::span<double> out) const override;
  void jacobian(std::span<const double> x, std::span<double> out) const override;

 private:
  std::shared_ptr<const Field> f_;
  double s_;
};

/// Centred monomial basis: (x_j - c_j), optionally with
/// (x_j - c_j)(x_k - c_k) for j <= k.
class Basis {
 public:
  enum class Kind { linear, quadratic };
  Basis(Kind kind, Vector centre);
  static Basis linear(std::size_t d) { return Basis(Kind::linear, Vector::Zero(static_cast<Eigen::Index>(d))); }

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(c_.size()); }
  std::size_t size() const noexcept;
  void values(std::span<const double> x, std::span<double> out) const;
  /// size() x d gradients, row-major.
  void gradients(std::span<const double> x, std::span<double> out) const;
  /// Hessian of basis function j (constant for this family).
  Matrix hessian(std::size_t j) const;

 private:
  Kind kind_;
  Vector c_;
};

/// K(x) = Minv * sum_j c_j grad b_j(x).
class GalerkinField final : public Field {
 public:
  GalerkinField(Basis basis, Vector coeffs, std::optional<Matrix> premultiply = {});
  std::size_t dim() const override { return basis_.dim(); }
  void value(std::span<const double> x, std::span<double> out) const override;
  void jacobian(std::span<const double> x, std::span<double> out) const override;
  const Vector& coefficients() const noexcept { return c_; }

 private:
  Basis basis_;
  Vector c_;
  std::optional<Matrix> m_;
  Matrix hess_;  // Minv * sum_j c_j Hess b_j
};

/// Monte-Carlo gradient of the fundamental solution:
/// (1/omega_d)(1/N) sum_i (y_i - x) / max(|x - y_i|, eps)^d (m_i - m_bar),
/// skipping y_i == x.
class FundamentalField final : public Field {
 public:
  FundamentalField(ParticleMatrix sources, std::vector<double> m, double epsilon);
  std::size_t dim() const override { return static_cast<std::size_t>(y_.cols()); }
  void value(std::span<const double> x, std::span<double> out) const override;
  double epsilon() const noexcept { return eps_; }

 private:
  ParticleMatrix y_;
  std::vector<double> w_;  // m_i - m_bar
  double eps_;
  double inv_omega_;
};

/// f(x) / max(rho(x), floor) with rho a Gaussian pdf.
class GaussianDividedField final : public Field {
 public:
  GaussianDividedField(std::shared_ptr<const Field> f, const GaussianFit& fit,
                       double floor = kDensityFloor);
  std::size_t dim() const override { return f_->dim(); }
  void value(std::span<const double> x, std::span<double> out) const override;
  double density(std::span<const double> x) const;
  double floor() const noexcept { return floor_; }

 private:
  std::shared_ptr<const Field> f_;
  Vector mean_;
  Matrix prec_;
  double log_norm_;
  double floor_;
};

/// Surface area of the unit sphere in R^d.
double unit_sphere_area(std::size_t d);

struct GainSolution {
  std::shared_ptr<const Field> field;
  GainDiagnostics diagnostics;
  /// Potential values at the particles (Galerkin) or on the grid (1D), centred.
  std::vector<double> potential;
  /// Weak-form data of Galerkin solves: stiffness, load.
  Matrix stiffness;
  Vector load;
};

/// K = P H^T (constant). SingularCovariance unless P is positive definite.
GainSolution solve_exact_gaussian(const Moments& moments, const RowVector& H);

/// K = Cov(x, h) (constant).
GainSolution solve_constant_gain(const Moments& moments);

/// d = 1 integration on a grid density. For fpf_psi, `prior_gain` is the
/// already-solved K of the phi equation. Returns grad(potential) (phi', psi',
/// Omega') for the weighted kinds and beta'/rho, alpha'/rho for the Crisan
/// kinds. UnresolvedTail when the grid truncates the right-hand side by more
/// than 1e-6. The field divides by max(rho, floor); with floor = 0 it
/// divides wherever rho > 0 (exact densities), filters on estimated
/// densities pass their density_floor.
GainSolution solve_1d_integral(const Density1D& density, const SystemModel& model,
                               PoissonKind kind, const Field* prior_gain = nullptr,
                               double floor = 0.0);

/// Galerkin projection of the weighted kinds on the cloud. `mass_inverse`
/// folds M^{-1} into the weak form (M = P^{-1} gives mass_inverse = P).
GainSolution solve_galerkin(const Ensemble& ens, const SystemModel& model,
                            PoissonKind kind, const Basis& basis,
                            const std::optional<Matrix>& mass_inverse = {},
                            const Field* prior_gain = nullptr);

/// Requires d >= 2; eps defaults to N^{-1/d}.
GainSolution solve_fundamental_mc(const Ensemble& ens, std::span<const double> m,
                                  std::optional<double> epsilon = {});

// ---------------------------------------------------------------------------
// Filter coefficient assembly

enum class FilterKind {
  delta_fpf,
  delta_reich,
  crisan_xiong,
  fpf_continuous,
  crisan_continuous,
  enkbf,
};

enum class GainMethod {
  exact_gaussian,
  constant_gain,
  galerkin,
  integral_1d,
  fundamental_mc,
};

enum class DensityEstimate { kde, gaussian_fit };

std::string_view to_string(FilterKind k) noexcept;
std::string_view to_string(GainMethod m) noexcept;
FilterKind parse_filter_kind(std::string_view s);
GainMethod parse_gain_method(std::string_view s);
MassMatrix parse_mass_matrix(std::string_view s);

/// Continuous kinds consume raw increments dZ and carry the Ito correction.
bool is_continuous(FilterKind k) noexcept;

struct GainOptions {
  GainMethod method = GainMethod::exact_gaussian;
  MassMatrix mass_matrix = MassMatrix::identity;  // delta_reich only
  Basis::Kind basis = Basis::Kind::linear;
  DensityEstimate density = DensityEstimate::kde;
  KdeOptions kde{std::nullopt, 0.0, 2001, KdeEvaluation::automatic};
  std::optional<double> kernel_epsilon;
  double density_floor = kDensityFloor;
};

/// Per-step coefficients of the unified particle update
///
///   dx = M(x) dt + dV + a(x) dt + K(x) (dY + w (h(x) + h_bar) dt) [+ J(x) K(x) dt / 2],
///
/// where dY is slope * dt for the delta-filters and dZ for continuous ones.
struct FilterCoefficients {
  std::shared_ptr<const Field> gain;
  std::shared_ptr<const Field> drift;  // may be null
  double innovation_weight = 0.0;
  double h_bar = 0.0;
  bool ito_correction = false;
  GainDiagnostics diagnostics;
};

FilterCoefficients assemble_filter_coefficients(FilterKind kind, const GainOptions& opts,
                                                const Ensemble& ens,
                                                const SystemModel& model);

/// Gain and drift evaluated at every particle.
struct GainField {
  ParticleMatrix at_particles;
  std::optional<ParticleMatrix> aux_drift;
  GainMethod method;
  GainDiagnostics diagnostics;
};

GainField evaluate_at_particles(const FilterCoefficients& c, GainMethod method,
                                const Ensemble& ens);

}  // namespace flowfilter
