#include "flowfilter/theory.hpp"

#include "flowfilter/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace flowfilter {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream os;
    os << name << " must be positive and finite (got " << v << ")";
    throw Error(ErrorCode::non_positive_parameter, os.str());
  }
}

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    std::ostringstream os;
    os << name << " must be nonnegative and finite (got " << v << ")";
    throw Error(ErrorCode::non_positive_parameter, os.str());
  }
}

double continuous_formula(double c_u, double c_g, double c_r) {
  return 1.0 / (c_u + std::min(c_g, std::sqrt(c_r / 2.0)));
}

double delta_formula(double kappa0, double T, double L, double h_sup, double h2_sup,
                     double delta, double max_dz) {
  const double ratio = T / delta;
  return (kappa0 + T) * std::exp((2.0 * L + h2_sup) * T + 2.0 * h_sup * ratio * ratio * max_dz);
}

// Number of eigenvalues of the symmetric tridiagonal (d, e) below mu.
std::size_t sturm_count(const std::vector<double>& d, const std::vector<double>& e, double mu) {
  std::size_t count = 0;
  double q = 1.0;
  constexpr double tiny = 1e-300;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double off = i == 0 ? 0.0 : e[i - 1] * e[i - 1] / q;
    q = d[i] - mu - off;
    if (q == 0.0) q = -tiny;
    if (q < 0.0) ++count;
  }
  return count;
}

// Solves (T - mu I) y = b for tridiagonal T by elimination without pivoting.
std::vector<double> tridiagonal_solve(const std::vector<double>& d, const std::vector<double>& e,
                                      double mu, std::vector<double> b) {
  const std::size_t n = d.size();
  std::vector<double> piv(n);
  piv[0] = d[0] - mu;
  for (std::size_t i = 1; i < n; ++i) {
    if (piv[i - 1] == 0.0) piv[i - 1] = 1e-300;
    const double l = e[i - 1] / piv[i - 1];
    piv[i] = d[i] - mu - l * e[i - 1];
    b[i] -= l * b[i - 1];
  }
  if (piv[n - 1] == 0.0) piv[n - 1] = 1e-300;
  b[n - 1] /= piv[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) b[i] = (b[i] - e[i] * b[i + 1]) / piv[i];
  return b;
}

}  // namespace

std::string_view to_string(BoundProvenance p) noexcept {
  switch (p) {
    case BoundProvenance::continuous_posterior: return "continuous_posterior";
    case BoundProvenance::smoothed_posterior: return "smoothed_posterior";
    case BoundProvenance::lipschitz_transfer: return "lipschitz_transfer";
    case BoundProvenance::empirical: return "empirical";
  }
  return "unknown";
}

std::optional<double> PoincareBound::input(std::string_view name) const {
  for (const auto& [k, v] : inputs) {
    if (k == name) return v;
  }
  return std::nullopt;
}

PoincareBound kappa_continuous(double c_u, double c_g, double c_r) {
  require_positive(c_u, "c_u");
  require_positive(c_g, "c_g");
  require_positive(c_r, "c_r");
  return {continuous_formula(c_u, c_g, c_r), BoundProvenance::continuous_posterior,
          {{"c_u", c_u}, {"c_g", c_g}, {"c_r", c_r}}, std::nullopt};
}

KappaDelta kappa_delta(double kappa0, double T, double lipschitz, double h_sup, double h2_sup,
                       double delta, double max_dz) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw Error(ErrorCode::non_positive_delta, "kappa_delta needs delta > 0");
  }
  require_nonnegative(kappa0, "kappa0");
  require_nonnegative(T, "T");
  require_nonnegative(lipschitz, "L_M");
  require_nonnegative(h_sup, "|h|_inf");
  require_nonnegative(h2_sup, "|h^2|_inf");
  require_nonnegative(max_dz, "sup |dZ|");
  KappaDelta out;
  out.bound = {delta_formula(kappa0, T, lipschitz, h_sup, h2_sup, delta, max_dz),
               BoundProvenance::smoothed_posterior,
               {{"kappa0", kappa0},
                {"T", T},
                {"L_M", lipschitz},
                {"h_sup", h_sup},
                {"h2_sup", h2_sup},
                {"delta", delta},
                {"max_dz", max_dz}},
               std::nullopt};
  out.signal_only = std::exp(2.0 * lipschitz * T) * (kappa0 + T);
  return out;
}

PoincareBound lipschitz_transfer(const PoincareBound& base, double lip) {
  require_positive(lip, "Lipschitz constant");
  PoincareBound out;
  out.constant = base.constant * lip * lip;
  out.stated_constant = base.constant * lip;
  out.provenance = BoundProvenance::lipschitz_transfer;
  out.inputs = {{"base_constant", base.constant}, {"lip", lip}};
  return out;
}

double recompute(const PoincareBound& b) {
  auto get = [&](const char* k) {
    const auto v = b.input(k);
    if (!v) throw Error(ErrorCode::invalid_argument, std::string("bound lacks input ") + k);
    return *v;
  };
  switch (b.provenance) {
    case BoundProvenance::continuous_posterior:
      return continuous_formula(get("c_u"), get("c_g"), get("c_r"));
    case BoundProvenance::smoothed_posterior:
      return delta_formula(get("kappa0"), get("T"), get("L_M"), get("h_sup"), get("h2_sup"),
                           get("delta"), get("max_dz"));
    case BoundProvenance::lipschitz_transfer: {
      const double lip = get("lip");
      return get("base_constant") * lip * lip;
    }
    case BoundProvenance::empirical:
      break;
  }
  throw Error(ErrorCode::invalid_argument, "empirical constants cannot be recomputed");
}

double gamma_map(double gamma, double c_r, double dt) {
  const double g = gamma + dt * c_r / 2.0;
  return g / (1.0 + dt * g);
}

double gamma_fixed_point(double c_r, double dt) {
  require_positive(c_r, "c_r");
  require_positive(dt, "dt");
  const double a = dt * c_r;
  return (-a + std::sqrt(a * a + 8.0 * c_r)) / 4.0;
}

bool GammaTrace::monotone() const {
  if (gamma.size() < 2) return true;
  const bool down = gamma.front() > fixed_point;
  // Near the fixed point the iterates jitter by an ulp or two.
  const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(fixed_point));
  for (std::size_t i = 1; i < gamma.size(); ++i) {
    if (down ? gamma[i] > gamma[i - 1] + slack : gamma[i] < gamma[i - 1] - slack) return false;
  }
  return true;
}

GammaTrace gamma_recursion(double c_g, double c_r, double dt, std::size_t steps,
                           std::optional<double> gamma0) {
  require_positive(c_g, "c_g");
  require_positive(c_r, "c_r");
  require_positive(dt, "dt");
  GammaTrace tr;
  tr.dt = dt;
  tr.c_g = c_g;
  tr.c_r = c_r;
  tr.fixed_point = gamma_fixed_point(c_r, dt);
  tr.fixed_point_residual = std::abs(gamma_map(tr.fixed_point, c_r, dt) - tr.fixed_point);
  tr.gamma.reserve(steps + 1);
  double g = gamma0.value_or(c_g);
  require_positive(g, "gamma0");
  tr.gamma.push_back(g);
  for (std::size_t i = 0; i < steps; ++i) {
    g = gamma_map(g, c_r, dt);
    tr.gamma.push_back(g);
  }
  tr.minimum = *std::min_element(tr.gamma.begin(), tr.gamma.end());
  return tr;
}

EmpiricalPoincare empirical_poincare_1d(const Density1D& density) {
  const std::size_t n = density.values.size();
  if (n < 3 || density.grid.n != n) {
    throw Error(ErrorCode::invalid_argument, "empirical_poincare_1d needs at least 3 grid points");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double v = density.values[i];
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "density is not positive at x = " << density.grid.x(i);
      throw Error(ErrorCode::non_positive_density, os.str());
    }
  }
  const double dx = density.grid.dx;
  const auto& rho = density.values;
  // Mass weights and face conductances.
  std::vector<double> mass(n), face(n - 1), sqm(n);
  for (std::size_t i = 0; i < n; ++i) {
    mass[i] = rho[i] * dx * ((i == 0 || i + 1 == n) ? 0.5 : 1.0);
    sqm[i] = std::sqrt(mass[i]);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) face[i] = 0.5 * (rho[i] + rho[i + 1]) / dx;

  // S = M^{-1/2} K M^{-1/2}, symmetric tridiagonal.
  std::vector<double> d(n, 0.0), e(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    d[i] += face[i];
    d[i + 1] += face[i];
  }
  for (std::size_t i = 0; i < n; ++i) d[i] /= mass[i];
  for (std::size_t i = 0; i + 1 < n; ++i) e[i] = -face[i] / (sqm[i] * sqm[i + 1]);

  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (i > 0 ? std::abs(e[i - 1]) : 0.0) + (i + 1 < n ? std::abs(e[i]) : 0.0);
    hi = std::max(hi, d[i] + r);
  }
  // Second eigenvalue (index 1): smallest mu with at least two eigenvalues below it.
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sturm_count(d, e, mid) >= 2) hi = mid;
    else lo = mid;
  }
  const double lambda = 0.5 * (lo + hi);
  if (!(lambda > 0.0)) {
    throw Error(ErrorCode::non_positive_density, "density grid has no spectral gap");
  }

  // Inverse iteration, deflating the constant mode M^{1/2} 1.
  std::vector<double> c0(sqm);
  const double c0n = std::sqrt(pairwise_sum(mass));
  for (double& v : c0) v /= c0n;
  auto deflate = [&](std::vector<double>& g) {
    std::vector<double> prod(n);
    for (std::size_t i = 0; i < n; ++i) prod[i] = g[i] * c0[i];
    const double p = pairwise_sum(prod);
    for (std::size_t i = 0; i < n; ++i) g[i] -= p * c0[i];
    for (std::size_t i = 0; i < n; ++i) prod[i] = g[i] * g[i];
    const double nrm = std::sqrt(pairwise_sum(prod));
    for (double& v : g) v /= nrm;
  };
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = density.grid.x(i) * sqm[i];
  deflate(g);
  const double shift = lambda * (1.0 - 1e-9);
  for (int it = 0; it < 6; ++it) {
    g = tridiagonal_solve(d, e, shift, g);
    deflate(g);
  }

  EmpiricalPoincare out;
  out.lambda1 = lambda;
  out.kappa = 1.0 / lambda;
  out.eigenfunction.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.eigenfunction[i] = g[i] / sqm[i];
  // Rayleigh certificate in the original variables.
  std::vector<double> tmp(n);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = mass[i] * out.eigenfunction[i];
  const double fbar = pairwise_sum(tmp) / pairwise_sum(mass);
  for (double& v : out.eigenfunction) v -= fbar;
  for (std::size_t i = 0; i < n; ++i) tmp[i] = mass[i] * out.eigenfunction[i] * out.eigenfunction[i];
  const double var = pairwise_sum(tmp);
  std::vector<double> en(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double df = out.eigenfunction[i + 1] - out.eigenfunction[i];
    en[i] = face[i] * df * df;
  }
  const double energy = pairwise_sum(en);
  out.rayleigh = energy / var;
  out.certified = var <= out.kappa * energy * (1.0 + 1e-8);
  const double scale = 1.0 / std::sqrt(var);
  for (double& v : out.eigenfunction) v *= scale;
  return out;
}

NotLogConcave::NotLogConcave(double witness, double curvature)
    : Error(ErrorCode::not_log_concave,
            [&] {
              std::ostringstream os;
              os << "(-log rho)'' = " << curvature << " at x = " << witness;
              return os.str();
            }()),
      witness_(witness) {}

BrascampLiebReport brascamp_lieb_check(const Density1D& density,
                                       const std::function<double(double)>& f,
                                       const std::function<double(double)>& fprime) {
  const std::size_t n = density.values.size();
  if (n < 3 || density.grid.n != n) {
    throw Error(ErrorCode::invalid_argument, "brascamp_lieb_check needs at least 3 grid points");
  }
  const double dx = density.grid.dx;
  std::vector<double> logr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = density.values[i];
    if (!(v > 0.0)) throw NotLogConcave(density.grid.x(i), -std::numeric_limits<double>::infinity());
    logr[i] = std::log(v);
  }
  std::vector<double> curv(n);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    curv[i] = -(logr[i + 1] - 2.0 * logr[i] + logr[i - 1]) / (dx * dx);
  }
  curv[0] = curv[1];
  curv[n - 1] = curv[n - 2];
  BrascampLiebReport rep;
  rep.min_curvature = std::numeric_limits<double>::infinity();
  std::size_t worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (curv[i] < rep.min_curvature) {
      rep.min_curvature = curv[i];
      worst = i;
    }
  }
  if (!(rep.min_curvature > 0.0)) throw NotLogConcave(density.grid.x(worst), rep.min_curvature);

  std::vector<double> fv(n), fp(n);
  for (std::size_t i = 0; i < n; ++i) fv[i] = f(density.grid.x(i));
  if (fprime) {
    for (std::size_t i = 0; i < n; ++i) fp[i] = fprime(density.grid.x(i));
  } else {
    fp = derivative(fv, dx);
  }
  const double mass = density.mass();
  std::vector<double> a(n), b(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = density.values[i];
    a[i] = fv[i] * r;
    b[i] = fv[i] * fv[i] * r;
    c[i] = fp[i] * fp[i] / curv[i] * r;
  }
  const double mean = trapezoid(a, dx) / mass;
  for (std::size_t i = 0; i < n; ++i) b[i] = (fv[i] - mean) * (fv[i] - mean) * density.values[i];
  rep.variance = trapezoid(b, dx) / mass;
  rep.bound = trapezoid(c, dx) / mass;
  rep.passed = rep.variance <= rep.bound + 1e-6;
  return rep;
}

}  // namespace flowfilter
