// Poincare constants for the filter densities: the bound along the
// continuous-time posterior, its piecewise-smoothed counterpart, the
// log-concavity recursion of the splitting scheme, and 1D spectral estimates
// used to check them.
#pragma once

#include "flowfilter/common.hpp"
#include "flowfilter/grid.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flowfilter {

enum class BoundProvenance {
  continuous_posterior,  // (c_u + min(c_g, sqrt(c_r/2)))^{-1}
  smoothed_posterior,    // (kappa0 + T) exp(...)
  lipschitz_transfer,
  empirical,
};

std::string_view to_string(BoundProvenance p) noexcept;

struct PoincareBound {
  double constant = 0.0;
  BoundProvenance provenance = BoundProvenance::empirical;
  /// Named inputs, enough to recompute `constant` bit-exactly.
  std::vector<std::pair<std::string, double>> inputs;
  /// Linear-rule value c * L kept next to the squared one for transfers.
  std::optional<double> stated_constant;

  std::optional<double> input(std::string_view name) const;
};

/// kappa = 1 / (c_u + min(c_g, sqrt(c_r / 2))). NonPositiveParameter otherwise.
PoincareBound kappa_continuous(double c_u, double c_g, double c_r);

struct KappaDelta {
  PoincareBound bound;  // kappa_T
  double signal_only = 0.0;  // exp(2 L T) (kappa0 + T)
};

/// kappa_T = (kappa0 + T) exp((2 L + |h^2|) T + 2 |h| (T / delta)^2 max_dz).
KappaDelta kappa_delta(double kappa0, double T, double lipschitz, double h_sup,
                       double h2_sup, double delta, double max_dz);

/// Returns c * lip^2; the linear value c * lip goes into stated_constant.
PoincareBound lipschitz_transfer(const PoincareBound& base, double lip);

/// Recomputes a non-empirical bound from its recorded inputs.
double recompute(const PoincareBound& b);

/// m(g) = (g + dt c_r/2) / (1 + dt (g + dt c_r/2)).
double gamma_map(double gamma, double c_r, double dt);

/// Closed-form fixed point (-dt c_r + sqrt((dt c_r)^2 + 8 c_r)) / 4.
double gamma_fixed_point(double c_r, double dt);

struct GammaTrace {
  std::vector<double> gamma;
  double dt = 0.0;
  double c_g = 0.0;
  double c_r = 0.0;
  double fixed_point = 0.0;
  double fixed_point_residual = 0.0;  // |m(g*) - g*|
  double minimum = 0.0;

  /// Monotone toward the fixed point, up to a few ulps of round-off.
  bool monotone() const;
};

/// gamma_0 = c_g unless given. NonPositiveParameter for non-positive inputs.
GammaTrace gamma_recursion(double c_g, double c_r, double dt, std::size_t steps,
                           std::optional<double> gamma0 = {});

struct EmpiricalPoincare {
  double kappa = 0.0;    // 1 / lambda1
  double lambda1 = 0.0;  // smallest nonzero eigenvalue
  double rayleigh = 0.0; // Rayleigh quotient of the returned eigenfunction
  bool certified = false;
  std::vector<double> eigenfunction;  // rho-mean zero, unit rho-norm
};

/// Smallest nonzero eigenvalue of -(1/rho)(rho f')' with zero-flux boundary,
/// discretised as a symmetric generalized tridiagonal problem (Dirichlet
/// form with midpoint weights, trapezoidal mass). Certified when the
/// eigenfunction satisfies Var(f) <= kappa * E(f) to 1e-8.
/// NonPositiveDensity unless every grid value is positive.
EmpiricalPoincare empirical_poincare_1d(const Density1D& density);

struct BrascampLiebReport {
  double variance = 0.0;
  double bound = 0.0;
  double min_curvature = 0.0;
  bool passed = false;
};

/// Var_rho(f) <= int f'^2 / (-log rho)'' rho dx with second differences of
/// log rho. NotLogConcave (witness in the message) if the curvature is not
/// positive somewhere on the grid. Without fprime, f' is differenced.
BrascampLiebReport brascamp_lieb_check(const Density1D& density,
                                       const std::function<double(double)>& f,
                                       const std::function<double(double)>& fprime = {});

class NotLogConcave : public Error {
 public:
  NotLogConcave(double witness, double curvature);
  double witness() const noexcept { return witness_; }

 private:
  double witness_;
};

}  // namespace flowfilter
