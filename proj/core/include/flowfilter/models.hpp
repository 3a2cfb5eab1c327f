// Signal/observation systems
//
//   dX_t = M(X_t) dt + dV_t,     dZ_t = h(X_t) dt + dW_t,
//
// with unit diffusion, scalar observations and the benchmark families used
// throughout the test-suite: linear-Gaussian systems, log-concave
// Ornstein-Uhlenbeck signals with linear sensors, and a bounded tanh sensor.
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/grid.hpp"
#include "flowfilter/rng.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace flowfilter {

using VectorMap = std::function<void(std::span<const double>, std::span<double>)>;
using ScalarMap = std::function<double(std::span<const double>)>;

enum class ModelKind { general, linear_gaussian, log_concave_ou };

/// User-asserted global bounds. They are spot-checked, never derived.
struct ModelBounds {
  std::optional<double> drift_lipschitz;  // L_M
  std::optional<double> drift_sup;
  std::optional<double> obs_sup;          // |h|_inf
  std::optional<double> obs_sq_sup;       // |h^2|_inf
  std::optional<double> obs_grad_sup;     // |grad h|_inf
};

/// Which hypothesis families a model claims to satisfy. Several can hold.
struct AssumptionRecord {
  bool bounded_smooth = false;            // M, h bounded with bounded derivatives
  bool lipschitz_drift_bounded_obs = false;  // L_M finite, h and grad h bounded
  bool linear_gaussian = false;
  bool log_concave_ou = false;
};

struct ConditionCheck {
  std::string name;
  bool evaluated = false;
  bool passed = true;
  /// Smallest slack over the cloud (negative means violated).
  double worst_margin = 0.0;
  std::vector<double> witness;
  std::string note;
};

/// Desk-scale certificate of conditions (C1)-(C4) on a finite point cloud.
struct ConditionReport {
  std::size_t cloud_size = 0;
  bool vacuous = true;
  std::array<ConditionCheck, 4> checks;
  /// Best constants supported by the cloud: min of -lambda_max(Hess U) and
  /// min of lambda_min(Hess R).
  double certified_c_u = 0.0;
  double certified_c_r = 0.0;
  std::optional<double> certified_c_g;

  bool all_passed() const;
};

class SystemModel {
 public:
  SystemModel(std::string name, std::size_t dim, VectorMap drift, ScalarMap obs,
              VectorMap obs_grad, ModelKind kind = ModelKind::general,
              ModelBounds bounds = {});

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return dim_; }
  ModelKind kind() const noexcept { return kind_; }
  const ModelBounds& bounds() const noexcept { return bounds_; }
  AssumptionRecord assumptions() const;

  void drift(std::span<const double> x, std::span<double> out) const { drift_(x, out); }
  double obs(std::span<const double> x) const { return obs_(x); }
  void obs_grad(std::span<const double> x, std::span<double> out) const { obs_grad_(x, out); }

  bool is_linear_gaussian() const noexcept { return linear_.has_value(); }
  /// Throws ModelMismatch unless the model is linear-Gaussian.
  const Matrix& A() const;
  const RowVector& H() const;

  const std::optional<ConditionReport>& condition_report() const noexcept {
    return conditions_;
  }

 private:
  friend SystemModel make_linear_gaussian(const Matrix&, const RowVector&);
  friend struct LogConcaveAccess;

  struct LinearData {
    Matrix A;
    RowVector H;
  };

  std::string name_;
  std::size_t dim_;
  VectorMap drift_;
  ScalarMap obs_;
  VectorMap obs_grad_;
  ModelKind kind_;
  ModelBounds bounds_;
  std::optional<LinearData> linear_;
  std::optional<ConditionReport> conditions_;
};

/// Potential U of a log-concave OU signal dX = grad U(X) dt + dV and the
/// constants of (C1)-(C4). Gradient and Laplacian are optional; when absent
/// they are taken by central differences.
struct LogConcaveOUSpec {
  std::size_t dim = 1;
  ScalarMap potential;
  VectorMap potential_grad;
  ScalarMap potential_laplacian;
  double c_u = 1.0;
  double c_g = 1.0;
  double c_r = 1.0;
  double linear_growth_D = 1.0;
};

class ConditionViolation : public Error {
 public:
  ConditionViolation(std::string condition, std::vector<double> witness,
                     double margin);
  const std::string& condition() const noexcept { return condition_; }
  const std::vector<double>& witness() const noexcept { return witness_; }
  double margin() const noexcept { return margin_; }

 private:
  std::string condition_;
  std::vector<double> witness_;
  double margin_;
};

struct GaussianInitial {
  Vector mean;
  Matrix cov;
};

class InitialDensity {
 public:
  static InitialDensity gaussian(Vector mean, Matrix cov,
                                 std::optional<double> log_concavity = {});
  static InitialDensity table(Density1D density,
                              std::optional<double> log_concavity = {});

  std::size_t dim() const;
  bool is_gaussian() const { return std::holds_alternative<GaussianInitial>(data_); }
  const GaussianInitial& as_gaussian() const;
  const Density1D& as_table() const;
  std::optional<double> log_concavity() const { return log_concavity_; }

  /// n iid draws, one per row; draw i uses counter index i of `stream`.
  ParticleMatrix sample(std::size_t n, std::uint64_t seed,
                        Stream stream = Stream::initial) const;

 private:
  std::variant<GaussianInitial, Density1D> data_;
  std::optional<double> log_concavity_;
};

// ---------------------------------------------------------------------------
// Factories

/// drift(x) = A x, obs(x) = H x. Rejects non-finite entries.
SystemModel make_linear_gaussian(const Matrix& A, const RowVector& H);

/// drift = grad U, obs = H x. Runs validate_conditions on `cloud` and throws
/// ConditionViolation when (C1) or (C3) fails beyond tolerance.
SystemModel make_log_concave_ou(const LogConcaveOUSpec& spec, const RowVector& H,
                                const ParticleMatrix& cloud,
                                const std::optional<InitialDensity>& initial = {});

/// Same as above without running the checks (the model is still tagged).
SystemModel make_log_concave_ou_unchecked(const LogConcaveOUSpec& spec,
                                          const RowVector& H);

/// U(x) = -(c/2)|x|^2 in dimension d: c_u = c, c_r = 2c^2, D = c.
LogConcaveOUSpec quadratic_ou_spec(std::size_t d, double c, double c_g);

/// Scalar benchmark with bounded sensor: M(x) = -decay * x, h(x) = tanh(x).
SystemModel make_tanh_model(double decay);

/// Scalar general model from plain lambdas, for tests and custom drifts.
SystemModel make_scalar_model(std::string name, std::function<double(double)> drift,
                              std::function<double(double)> obs,
                              std::function<double(double)> obs_derivative,
                              ModelBounds bounds = {});

/// Regular lattice {-r, ..., r}^d with the given spacing.
ParticleMatrix lattice_cloud(std::size_t d, double radius, double spacing);

// ---------------------------------------------------------------------------
// Checks

ConditionReport validate_conditions(const SystemModel& model,
                                    const LogConcaveOUSpec& spec,
                                    const ParticleMatrix& cloud,
                                    const std::optional<InitialDensity>& initial = {});

/// Max over the cloud of |grad h - central FD| / max(1, |grad h|).
double gradient_consistency_error(const SystemModel& model,
                                  const ParticleMatrix& cloud, double step = 1e-5);

struct BoundsSpotCheck {
  bool drift_lipschitz_ok = true;
  bool obs_sup_ok = true;
  bool obs_sq_sup_ok = true;
  double worst_lipschitz_ratio = 0.0;  // max |M(x)-M(y)| / |x-y| seen
};

/// Spot-checks the asserted bounds on all points and consecutive pairs.
BoundsSpotCheck spot_check_bounds(const SystemModel& model,
                                  const ParticleMatrix& cloud);

}  // namespace flowfilter
