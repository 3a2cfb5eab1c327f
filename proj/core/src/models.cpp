#include "flowfilter/models.hpp"

#include "flowfilter/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace flowfilter {

namespace {

constexpr double kHessianStep = 1e-4;
constexpr double kConditionTol = 1e-4;
constexpr double kGradientStep = 1e-5;

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::vector<double> to_std(std::span<const double> x) { return {x.begin(), x.end()}; }

/// Gradient of U, analytic when supplied.
Vector potential_gradient(const LogConcaveOUSpec& spec, std::span<const double> x) {
  const std::size_t d = x.size();
  Vector g(static_cast<Eigen::Index>(d));
  if (spec.potential_grad) {
    spec.potential_grad(x, {g.data(), d});
    return g;
  }
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t j = 0; j < d; ++j) {
    const double h = kGradientStep * std::max(1.0, std::abs(x[j]));
    y[j] = x[j] + h;
    const double up = spec.potential(y);
    y[j] = x[j] - h;
    const double dn = spec.potential(y);
    y[j] = x[j];
    g[static_cast<Eigen::Index>(j)] = (up - dn) / (2.0 * h);
  }
  return g;
}

/// Symmetrised central-difference Hessian of a scalar function.
template <class F>
Matrix scalar_hessian(const F& f, std::span<const double> x, double h) {
  const std::size_t d = x.size();
  Matrix H(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::vector<double> y(x.begin(), x.end());
  const double f0 = f(std::span<const double>(y));
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = x[i] + h;
    const double fp = f(std::span<const double>(y));
    y[i] = x[i] - h;
    const double fm = f(std::span<const double>(y));
    y[i] = x[i];
    H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = (fp - 2.0 * f0 + fm) / (h * h);
    for (std::size_t j = i + 1; j < d; ++j) {
      auto eval = [&](double si, double sj) {
        y[i] = x[i] + si * h;
        y[j] = x[j] + sj * h;
        const double v = f(std::span<const double>(y));
        y[i] = x[i];
        y[j] = x[j];
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * h * h);
      H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return H;
}

/// Hessian of U: differences of the analytic gradient when available,
/// second differences of U otherwise.
Matrix potential_hessian(const LogConcaveOUSpec& spec, std::span<const double> x) {
  const std::size_t d = x.size();
  if (!spec.potential_grad) {
    return scalar_hessian(spec.potential, x, kHessianStep);
  }
  Matrix H(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::vector<double> y(x.begin(), x.end());
  Vector gp(static_cast<Eigen::Index>(d)), gm(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    y[j] = x[j] + kHessianStep;
    spec.potential_grad(y, {gp.data(), d});
    y[j] = x[j] - kHessianStep;
    spec.potential_grad(y, {gm.data(), d});
    y[j] = x[j];
    H.col(static_cast<Eigen::Index>(j)) = (gp - gm) / (2.0 * kHessianStep);
  }
  return 0.5 * (H + H.transpose());
}

double potential_laplacian(const LogConcaveOUSpec& spec, std::span<const double> x) {
  if (spec.potential_laplacian) return spec.potential_laplacian(x);
  return potential_hessian(spec, x).trace();
}

/// R is built from first and second derivatives of U; when those are finite
/// differences themselves, its Hessian needs a wider stencil to stay above
/// the rounding noise.
double r_hessian_step(const LogConcaveOUSpec& spec) {
  if (!spec.potential_grad) return 1e-2;
  if (!spec.potential_laplacian) return 1e-3;
  return kHessianStep;
}

std::pair<double, double> eig_range(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

void record(ConditionCheck& c, double margin, std::span<const double> x) {
  if (!c.evaluated || margin < c.worst_margin) {
    c.worst_margin = margin;
    c.witness = to_std(x);
  }
  c.evaluated = true;
}

void validate_spec_constants(const LogConcaveOUSpec& spec) {
  if (!(spec.c_u > 0.0) || !(spec.c_g > 0.0) || !(spec.c_r > 0.0) ||
      !(spec.linear_growth_D > 0.0)) {
    throw Error(ErrorCode::non_positive_parameter,
                "log-concave OU constants c_u, c_g, c_r, D must be positive");
  }
  if (!spec.potential) {
    throw Error(ErrorCode::invalid_argument, "log-concave OU spec has no potential");
  }
  if (spec.dim == 0) throw Error(ErrorCode::invalid_argument, "dimension must be positive");
}

}  // namespace

// ---------------------------------------------------------------------------

bool ConditionReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const ConditionCheck& c) { return c.passed; });
}

SystemModel::SystemModel(std::string name, std::size_t dim, VectorMap drift,
                         ScalarMap obs, VectorMap obs_grad, ModelKind kind,
                         ModelBounds bounds)
    : name_(std::move(name)),
      dim_(dim),
      drift_(std::move(drift)),
      obs_(std::move(obs)),
      obs_grad_(std::move(obs_grad)),
      kind_(kind),
      bounds_(bounds) {
  if (dim_ == 0) throw Error(ErrorCode::invalid_argument, "model dimension must be positive");
  if (!drift_ || !obs_ || !obs_grad_) {
    throw Error(ErrorCode::invalid_argument, "model needs drift, obs and obs_grad");
  }
  for (const auto& b : {bounds_.drift_lipschitz, bounds_.drift_sup, bounds_.obs_sup,
                        bounds_.obs_sq_sup, bounds_.obs_grad_sup}) {
    if (b && !(*b >= 0.0)) {
      throw Error(ErrorCode::invalid_argument, "model bounds must be nonnegative");
    }
  }
}

AssumptionRecord SystemModel::assumptions() const {
  AssumptionRecord a;
  a.linear_gaussian = linear_.has_value();
  a.log_concave_ou = kind_ == ModelKind::log_concave_ou;
  const bool obs_bounded = bounds_.obs_sup.has_value() && bounds_.obs_grad_sup.has_value();
  a.lipschitz_drift_bounded_obs = bounds_.drift_lipschitz.has_value() && obs_bounded;
  a.bounded_smooth = a.lipschitz_drift_bounded_obs && bounds_.drift_sup.has_value();
  return a;
}

const Matrix& SystemModel::A() const {
  if (!linear_) throw Error(ErrorCode::model_mismatch, "model is not linear-Gaussian");
  return linear_->A;
}

const RowVector& SystemModel::H() const {
  if (!linear_) throw Error(ErrorCode::model_mismatch, "model is not linear-Gaussian");
  return linear_->H;
}

ConditionViolation::ConditionViolation(std::string condition,
                                       std::vector<double> witness, double margin)
    : Error(ErrorCode::condition_violation,
            [&] {
              std::ostringstream os;
              os << "condition " << condition << " violated at x = (";
              for (std::size_t i = 0; i < witness.size(); ++i) {
                os << (i ? ", " : "") << witness[i];
              }
              os << "), margin " << margin;
              return os.str();
            }()),
      condition_(std::move(condition)),
      witness_(std::move(witness)),
      margin_(margin) {}

// ---------------------------------------------------------------------------
// Initial densities

InitialDensity InitialDensity::gaussian(Vector mean, Matrix cov,
                                        std::optional<double> log_concavity) {
  const auto d = mean.size();
  if (d == 0 || cov.rows() != d || cov.cols() != d) {
    throw Error(ErrorCode::invalid_argument, "gaussian initial: mean/cov shape mismatch");
  }
  if (!mean.allFinite() || !cov.allFinite()) {
    throw Error(ErrorCode::non_finite_state, "gaussian initial: non-finite entries");
  }
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::singular_covariance, "gaussian initial: covariance not symmetric");
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::singular_covariance,
                "gaussian initial: covariance not positive definite");
  }
  if (log_concavity && !(*log_concavity > 0.0)) {
    throw Error(ErrorCode::non_positive_parameter, "log_concavity must be positive");
  }
  InitialDensity r;
  r.data_ = GaussianInitial{std::move(mean), std::move(cov)};
  r.log_concavity_ = log_concavity;
  return r;
}

InitialDensity InitialDensity::table(Density1D density,
                                     std::optional<double> log_concavity) {
  if (density.grid.n < 3 || density.values.size() != density.grid.n ||
      !(density.grid.dx > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "table initial: malformed grid");
  }
  for (double v : density.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::non_positive_density, "table initial: negative or non-finite value");
    }
  }
  if (std::abs(density.mass() - 1.0) > 1e-10) {
    throw Error(ErrorCode::invalid_argument,
                "table initial: trapezoidal mass differs from 1 by more than 1e-10");
  }
  if (log_concavity && !(*log_concavity > 0.0)) {
    throw Error(ErrorCode::non_positive_parameter, "log_concavity must be positive");
  }
  InitialDensity r;
  r.data_ = std::move(density);
  r.log_concavity_ = log_concavity;
  return r;
}

std::size_t InitialDensity::dim() const {
  if (const auto* g = std::get_if<GaussianInitial>(&data_)) {
    return static_cast<std::size_t>(g->mean.size());
  }
  return 1;
}

const GaussianInitial& InitialDensity::as_gaussian() const {
  if (const auto* g = std::get_if<GaussianInitial>(&data_)) return *g;
  throw Error(ErrorCode::model_mismatch, "initial density is not Gaussian");
}

const Density1D& InitialDensity::as_table() const {
  if (const auto* t = std::get_if<Density1D>(&data_)) return *t;
  throw Error(ErrorCode::model_mismatch, "initial density is not a grid table");
}

ParticleMatrix InitialDensity::sample(std::size_t n, std::uint64_t seed,
                                      Stream stream) const {
  const std::size_t d = dim();
  ParticleMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  if (const auto* g = std::get_if<GaussianInitial>(&data_)) {
    const Matrix L = Eigen::LLT<Matrix>(g->cov).matrixL();
    Vector z(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      standard_normals(seed, stream, i, 0, {z.data(), d});
      out.row(static_cast<Eigen::Index>(i)) = (g->mean + L * z).transpose();
    }
    return out;
  }
  // Inverse-CDF sampling of the piecewise-linear density.
  const auto& t = std::get<Density1D>(data_);
  const std::size_t m = t.grid.n;
  std::vector<double> cdf(m, 0.0);
  for (std::size_t k = 1; k < m; ++k) {
    cdf[k] = cdf[k - 1] + 0.5 * t.grid.dx * (t.values[k - 1] + t.values[k]);
  }
  const double total = cdf.back();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    standard_normals(seed, stream, i, 0, {&z, 1});
    const double u = 0.5 * std::erfc(-z / std::numbers::sqrt2) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t k = it == cdf.begin() ? 0 : static_cast<std::size_t>(it - cdf.begin()) - 1;
    k = std::min(k, m - 2);
    const double f0 = t.values[k];
    const double f1 = t.values[k + 1];
    const double need = u - cdf[k];
    // Solve f0*s + (f1-f0)*s^2/(2 dx) = need for s in [0, dx].
    const double a = 0.5 * (f1 - f0) / t.grid.dx;
    double s;
    if (std::abs(a) < 1e-300) {
      s = f0 > 0.0 ? need / f0 : 0.5 * t.grid.dx;
    } else {
      const double disc = std::max(0.0, f0 * f0 + 4.0 * a * need);
      s = 2.0 * need / (f0 + std::sqrt(disc));
    }
    s = std::clamp(s, 0.0, t.grid.dx);
    out(static_cast<Eigen::Index>(i), 0) = t.grid.x(k) + s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Factories

SystemModel make_linear_gaussian(const Matrix& A, const RowVector& H) {
  const auto d = A.rows();
  if (d == 0 || A.cols() != d || H.size() != d) {
    throw Error(ErrorCode::invalid_argument, "linear-Gaussian model: A must be d x d, H 1 x d");
  }
  if (!all_finite(A) || !H.allFinite()) {
    throw Error(ErrorCode::non_finite_state, "linear-Gaussian model: non-finite entries");
  }
  const auto ud = static_cast<std::size_t>(d);
  auto drift = [A](std::span<const double> x, std::span<double> out) {
    as_vector(out).noalias() = A * as_vector(x);
  };
  auto obs = [H](std::span<const double> x) { return H.dot(as_vector(x).transpose()); };
  auto grad = [H](std::span<const double>, std::span<double> out) {
    as_vector(out) = H.transpose();
  };
  ModelBounds bounds;
  bounds.drift_lipschitz = Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
  SystemModel m("linear_gaussian", ud, drift, obs, grad, ModelKind::linear_gaussian, bounds);
  m.linear_ = SystemModel::LinearData{A, H};
  return m;
}

struct LogConcaveAccess {
  static void attach(SystemModel& m, ConditionReport report) {
    m.conditions_ = std::move(report);
  }
};

SystemModel make_log_concave_ou_unchecked(const LogConcaveOUSpec& spec,
                                          const RowVector& H) {
  validate_spec_constants(spec);
  if (static_cast<std::size_t>(H.size()) != spec.dim || !H.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "log-concave OU: H must be finite and 1 x d");
  }
  auto drift = [spec](std::span<const double> x, std::span<double> out) {
    const Vector g = potential_gradient(spec, x);
    std::copy(g.data(), g.data() + g.size(), out.begin());
  };
  auto obs = [H](std::span<const double> x) { return H.dot(as_vector(x).transpose()); };
  auto grad = [H](std::span<const double>, std::span<double> out) {
    as_vector(out) = H.transpose();
  };
  return SystemModel("log_concave_ou", spec.dim, drift, obs, grad, ModelKind::log_concave_ou);
}

SystemModel make_log_concave_ou(const LogConcaveOUSpec& spec, const RowVector& H,
                                const ParticleMatrix& cloud,
                                const std::optional<InitialDensity>& initial) {
  SystemModel m = make_log_concave_ou_unchecked(spec, H);
  ConditionReport report = validate_conditions(m, spec, cloud, initial);
  for (int c : {0, 2}) {
    const auto& chk = report.checks[static_cast<std::size_t>(c)];
    if (chk.evaluated && !chk.passed) {
      throw ConditionViolation(chk.name, chk.witness, chk.worst_margin);
    }
  }
  LogConcaveAccess::attach(m, std::move(report));
  return m;
}

LogConcaveOUSpec quadratic_ou_spec(std::size_t d, double c, double c_g) {
  LogConcaveOUSpec s;
  s.dim = d;
  s.potential = [c](std::span<const double> x) {
    return -0.5 * c * as_vector(x).squaredNorm();
  };
  s.potential_grad = [c](std::span<const double> x, std::span<double> out) {
    as_vector(out) = -c * as_vector(x);
  };
  s.potential_laplacian = [c, d](std::span<const double>) {
    return -c * static_cast<double>(d);
  };
  s.c_u = c;
  s.c_g = c_g;
  s.c_r = 2.0 * c * c;
  s.linear_growth_D = c;
  return s;
}

SystemModel make_scalar_model(std::string name, std::function<double(double)> drift,
                              std::function<double(double)> obs,
                              std::function<double(double)> obs_derivative,
                              ModelBounds bounds) {
  return SystemModel(
      std::move(name), 1,
      [drift](std::span<const double> x, std::span<double> out) { out[0] = drift(x[0]); },
      [obs](std::span<const double> x) { return obs(x[0]); },
      [obs_derivative](std::span<const double> x, std::span<double> out) {
        out[0] = obs_derivative(x[0]);
      },
      ModelKind::general, bounds);
}

SystemModel make_tanh_model(double decay) {
  if (!(decay >= 0.0) || !std::isfinite(decay)) {
    throw Error(ErrorCode::invalid_argument, "tanh model: decay must be finite and >= 0");
  }
  ModelBounds b;
  b.drift_lipschitz = decay;
  b.obs_sup = 1.0;
  b.obs_sq_sup = 1.0;
  b.obs_grad_sup = 1.0;
  return make_scalar_model(
      "tanh", [decay](double x) { return -decay * x; },
      [](double x) { return std::tanh(x); },
      [](double x) {
        const double c = std::cosh(x);
        return 1.0 / (c * c);
      },
      b);
}

ParticleMatrix lattice_cloud(std::size_t d, double radius, double spacing) {
  if (d == 0 || !(spacing > 0.0) || !(radius >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "lattice_cloud: bad arguments");
  }
  const auto per_axis = static_cast<std::size_t>(std::floor(2.0 * radius / spacing + 1e-9)) + 1;
  std::size_t total = 1;
  for (std::size_t k = 0; k < d; ++k) total *= per_axis;
  ParticleMatrix cloud(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (std::size_t k = 0; k < d; ++k) {
      cloud(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          -radius + static_cast<double>(rem % per_axis) * spacing;
      rem /= per_axis;
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Checks

ConditionReport validate_conditions(const SystemModel& model,
                                    const LogConcaveOUSpec& spec,
                                    const ParticleMatrix& cloud,
                                    const std::optional<InitialDensity>& initial) {
  if (model.kind() != ModelKind::log_concave_ou) {
    throw Error(ErrorCode::model_mismatch, "validate_conditions needs a log-concave OU model");
  }
  validate_spec_constants(spec);
  const std::size_t d = model.dim();
  if (cloud.rows() > 0 && static_cast<std::size_t>(cloud.cols()) != d) {
    throw Error(ErrorCode::invalid_argument, "validate_conditions: cloud dimension mismatch");
  }

  ConditionReport rep;
  rep.cloud_size = static_cast<std::size_t>(cloud.rows());
  rep.vacuous = rep.cloud_size == 0;
  const char* names[4] = {"C1", "C2", "C3", "C4"};
  for (std::size_t k = 0; k < 4; ++k) rep.checks[k].name = names[k];
  if (rep.vacuous) {
    for (auto& c : rep.checks) c.note = "vacuous: empty cloud";
    return rep;
  }

  // H is recovered from obs_grad (constant for this family).
  Vector Hv(static_cast<Eigen::Index>(d));
  {
    const std::vector<double> zero(d, 0.0);
    model.obs_grad(zero, {Hv.data(), d});
  }
  auto R = [&](std::span<const double> x) {
    const double hx = Hv.dot(as_vector(x));
    return hx * hx + potential_laplacian(spec, x) + potential_gradient(spec, x).squaredNorm();
  };
  const double r_step = r_hessian_step(spec);

  // (C2) needs the initial log-density curvature.
  std::optional<Matrix> gaussian_precision;
  const Density1D* table = nullptr;
  std::vector<double> table_curv;
  if (initial) {
    if (initial->dim() != d) {
      throw Error(ErrorCode::invalid_argument, "validate_conditions: initial dimension mismatch");
    }
    if (initial->is_gaussian()) {
      gaussian_precision = initial->as_gaussian().cov.inverse();
    } else {
      table = &initial->as_table();
      std::vector<double> logv(table->grid.n);
      for (std::size_t i = 0; i < table->grid.n; ++i) {
        logv[i] = table->values[i] > 0.0 ? -std::log(table->values[i])
                                         : std::numeric_limits<double>::infinity();
      }
      table_curv.assign(table->grid.n, std::numeric_limits<double>::quiet_NaN());
      const double dx2 = table->grid.dx * table->grid.dx;
      for (std::size_t i = 1; i + 1 < table->grid.n; ++i) {
        table_curv[i] = (logv[i + 1] - 2.0 * logv[i] + logv[i - 1]) / dx2;
      }
    }
  } else {
    rep.checks[1].note = "not evaluated: no initial density supplied";
  }

  rep.certified_c_u = std::numeric_limits<double>::infinity();
  rep.certified_c_r = std::numeric_limits<double>::infinity();
  double cert_g = std::numeric_limits<double>::infinity();

  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const auto x = row_span(cloud, i);
    const Matrix HU = potential_hessian(spec, x);
    const auto [u_lo, u_hi] = eig_range(HU);
    record(rep.checks[0], -spec.c_u - u_hi, x);
    rep.certified_c_u = std::min(rep.certified_c_u, -u_hi);

    if (gaussian_precision) {
      const auto [g_lo, g_hi] = eig_range(HU + *gaussian_precision);
      (void)g_hi;
      record(rep.checks[1], g_lo - spec.c_g, x);
      cert_g = std::min(cert_g, g_lo);
    } else if (table) {
      const double s = (x[0] - table->grid.x0) / table->grid.dx;
      if (s >= 1.0 && s <= static_cast<double>(table->grid.n - 2)) {
        const double curv = HU(0, 0) + interpolate_uniform(table_curv, table->grid.x0,
                                                           table->grid.dx, x[0]);
        if (std::isfinite(curv)) {
          record(rep.checks[1], curv - spec.c_g, x);
          cert_g = std::min(cert_g, curv);
        }
      }
    }

    const Matrix HR = scalar_hessian(R, x, r_step);
    const auto [r_lo, r_hi] = eig_range(HR);
    (void)r_hi;
    record(rep.checks[2], r_lo - spec.c_r, x);
    rep.certified_c_r = std::min(rep.certified_c_r, r_lo);

    const double growth = spec.linear_growth_D * (1.0 + as_vector(x).norm());
    record(rep.checks[3], growth - potential_gradient(spec, x).norm(), x);
  }

  for (std::size_t k = 0; k < 3; ++k) {
    auto& c = rep.checks[k];
    c.passed = !c.evaluated || c.worst_margin >= -kConditionTol;
  }
  {
    auto& c = rep.checks[3];
    c.passed = !c.evaluated || c.worst_margin >= -1e-12 * spec.linear_growth_D;
  }
  if (!rep.checks[1].evaluated && rep.checks[1].note.empty()) {
    rep.checks[1].note = "not evaluated: cloud outside the initial density table";
  }
  if (std::isfinite(cert_g)) rep.certified_c_g = cert_g;
  return rep;
}

double gradient_consistency_error(const SystemModel& model,
                                  const ParticleMatrix& cloud, double step) {
  const std::size_t d = model.dim();
  double worst = 0.0;
  std::vector<double> g(d), y(d);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const auto x = row_span(cloud, i);
    model.obs_grad(x, g);
    std::copy(x.begin(), x.end(), y.begin());
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = x[j] + step;
      const double up = model.obs(y);
      y[j] = x[j] - step;
      const double dn = model.obs(y);
      y[j] = x[j];
      const double fd = (up - dn) / (2.0 * step);
      worst = std::max(worst, std::abs(g[j] - fd) / std::max(1.0, std::abs(g[j])));
    }
  }
  return worst;
}

BoundsSpotCheck spot_check_bounds(const SystemModel& model, const ParticleMatrix& cloud) {
  BoundsSpotCheck out;
  const std::size_t d = model.dim();
  const auto& b = model.bounds();
  std::vector<double> fa(d), fb(d);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const auto x = row_span(cloud, i);
    const double h = model.obs(x);
    if (b.obs_sup && std::abs(h) > *b.obs_sup * (1.0 + 1e-12)) out.obs_sup_ok = false;
    if (b.obs_sq_sup && h * h > *b.obs_sq_sup * (1.0 + 1e-12)) out.obs_sq_sup_ok = false;
    if (i + 1 < cloud.rows()) {
      const auto y = row_span(cloud, i + 1);
      model.drift(x, fa);
      model.drift(y, fb);
      const double num = (as_vector(std::span<const double>(fa)) -
                          as_vector(std::span<const double>(fb))).norm();
      const double den = (as_vector(x) - as_vector(y)).norm();
      if (den > 0.0) {
        const double ratio = num / den;
        out.worst_lipschitz_ratio = std::max(out.worst_lipschitz_ratio, ratio);
        if (b.drift_lipschitz && ratio > *b.drift_lipschitz * (1.0 + 1e-10) + 1e-12) {
          out.drift_lipschitz_ok = false;
        }
      }
    }
  }
  return out;
}

}  // namespace flowfilter
