#include "flowfilter/gain.hpp"

#include "flowfilter/numerics.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace flowfilter {

namespace {

constexpr double kRidge = 1e-10;
constexpr double kMaxCondition = 1e12;
constexpr double kTailTolerance = 1e-6;

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

// exp(x^2) erfc(x), asymptotic series once erfc underflows.
double erfcx(double x) {
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  const double r = 1.0 / (2.0 * x * x);
  return (1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r))) / (x * std::sqrt(std::numbers::pi));
}

// Integral of q(s) rho(s) over s in (-inf, 0], where s = 0 is a grid end, s
// grows inward, and q, log rho are the quadratics through the samples at
// s = 0, dx, 2 dx. Exact for Gaussian tails; 0 when the end samples do not
// describe a decaying tail.
double tail_integral(const double q[3], const double rho[3], double dx) {
  if (!(rho[0] > 0.0 && rho[1] > 0.0 && rho[2] > 0.0)) return 0.0;
  const double l0 = std::log(rho[0]), l1 = std::log(rho[1]), l2 = std::log(rho[2]);
  const double c = (l0 - 2.0 * l1 + l2) / (2.0 * dx * dx);
  const double b = (l1 - l0) / dx - c * dx;
  const double gam = (q[0] - 2.0 * q[1] + q[2]) / (2.0 * dx * dx);
  const double beta = (q[1] - q[0]) / dx - gam * dx;
  const double alpha = q[0];
  if (c < 0.0) {
    // rho = rho0 exp(b s + c s^2); shift to u = s - mu with variance v.
    const double v = -0.5 / c;
    const double mu = b * v;
    const double t = mu / std::sqrt(v);
    const double m0 = std::sqrt(2.0 * std::numbers::pi * v) * 0.5 * erfcx(t / std::numbers::sqrt2);
    const double p0 = alpha + beta * mu + gam * mu * mu;
    return rho[0] * (p0 * m0 - (beta + 2.0 * gam * mu) * v + gam * (v * m0 + mu * v));
  }
  if (b > 0.0) return rho[0] * (alpha / b - beta / (b * b) + 2.0 * gam / (b * b * b));
  return 0.0;
}

}  // namespace

std::string_view to_string(PoissonKind k) noexcept {
  switch (k) {
    case PoissonKind::fpf_phi: return "fpf_phi";
    case PoissonKind::fpf_psi: return "fpf_psi";
    case PoissonKind::reich_omega: return "reich_omega";
    case PoissonKind::crisan_beta: return "crisan_beta";
    case PoissonKind::crisan_alpha: return "crisan_alpha";
  }
  return "unknown";
}

std::string_view to_string(MassMatrix m) noexcept {
  switch (m) {
    case MassMatrix::identity: return "identity";
    case MassMatrix::rho_identity: return "rho_identity";
    case MassMatrix::cov_inverse: return "cov_inverse";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Fields

void Field::jacobian(std::span<const double> x, std::span<double> out) const {
  const std::size_t d = dim();
  std::vector<double> y(x.begin(), x.end()), up(d), dn(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    y[j] = x[j] + h;
    value(y, up);
    y[j] = x[j] - h;
    value(y, dn);
    y[j] = x[j];
    for (std::size_t i = 0; i < d; ++i) out[i * d + j] = (up[i] - dn[i]) / (2.0 * h);
  }
}

void ConstantField::value(std::span<const double>, std::span<double> out) const {
  std::copy(k_.data(), k_.data() + k_.size(), out.begin());
}

void ConstantField::jacobian(std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void AffineField::value(std::span<const double> x, std::span<double> out) const {
  as_vector(out).noalias() = G_ * as_vector(x) + c_;
}

void AffineField::jacobian(std::span<const double>, std::span<double> out) const {
  const auto d = G_.rows();
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out[static_cast<std::size_t>(i * d + j)] = G_(i, j);
  }
}

GridField1D::GridField1D(UniformGrid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.n || grid_.n < 3) {
    throw Error(ErrorCode::invalid_argument, "grid field: value count does not match grid");
  }
  slope_ = derivative(values_, grid_.dx);
}

void GridField1D::value(std::span<const double> x, std::span<double> out) const {
  out[0] = interpolate_uniform(values_, grid_.x0, grid_.dx, x[0]);
}

void GridField1D::jacobian(std::span<const double> x, std::span<double> out) const {
  out[0] = interpolate_uniform(slope_, grid_.x0, grid_.dx, x[0]);
}

void ScaledField::value(std::span<const double> x, std::span<double> out) const {
  f_->value(x, out);
  for (double& v : out) v *= s_;
}

void ScaledField::jacobian(std::span<const double> x, std::span<double> out) const {
  f_->jacobian(x, out);
  for (double& v : out) v *= s_;
}

Basis::Basis(Kind kind, Vector centre) : kind_(kind), c_(std::move(centre)) {
  if (c_.size() == 0) throw Error(ErrorCode::invalid_argument, "basis dimension must be positive");
}

std::size_t Basis::size() const noexcept {
  const std::size_t d = dim();
  return kind_ == Kind::linear ? d : d + d * (d + 1) / 2;
}

void Basis::values(std::span<const double> x, std::span<double> out) const {
  const std::size_t d = dim();
  for (std::size_t j = 0; j < d; ++j) out[j] = x[j] - c_(idx(j));
  if (kind_ == Kind::quadratic) {
    std::size_t p = d;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = j; k < d; ++k) out[p++] = out[j] * out[k];
    }
  }
}

void Basis::gradients(std::span<const double> x, std::span<double> out) const {
  const std::size_t d = dim();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(size() * d), 0.0);
  for (std::size_t j = 0; j < d; ++j) out[j * d + j] = 1.0;
  if (kind_ == Kind::quadratic) {
    std::size_t p = d;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = j; k < d; ++k, ++p) {
        out[p * d + j] += x[k] - c_(idx(k));
        out[p * d + k] += x[j] - c_(idx(j));
      }
    }
  }
}

Matrix Basis::hessian(std::size_t j) const {
  const std::size_t d = dim();
  Matrix H = Matrix::Zero(idx(d), idx(d));
  if (kind_ == Kind::linear || j < d) return H;
  std::size_t p = d;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b, ++p) {
      if (p == j) {
        H(idx(a), idx(b)) += 1.0;
        H(idx(b), idx(a)) += 1.0;
        return H;
      }
    }
  }
  return H;
}

GalerkinField::GalerkinField(Basis basis, Vector coeffs, std::optional<Matrix> premultiply)
    : basis_(std::move(basis)), c_(std::move(coeffs)), m_(std::move(premultiply)) {
  const std::size_t d = basis_.dim();
  if (static_cast<std::size_t>(c_.size()) != basis_.size()) {
    throw Error(ErrorCode::invalid_argument, "Galerkin coefficients do not match basis");
  }
  hess_ = Matrix::Zero(idx(d), idx(d));
  for (std::size_t j = 0; j < basis_.size(); ++j) hess_ += c_(idx(j)) * basis_.hessian(j);
  if (m_) hess_ = (*m_) * hess_;
}

void GalerkinField::value(std::span<const double> x, std::span<double> out) const {
  const std::size_t d = basis_.dim();
  const std::size_t B = basis_.size();
  std::vector<double> g(B * d);
  basis_.gradients(x, g);
  Vector v = Vector::Zero(idx(d));
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t k = 0; k < d; ++k) v(idx(k)) += c_(idx(j)) * g[j * d + k];
  }
  if (m_) v = (*m_) * v;
  std::copy(v.data(), v.data() + v.size(), out.begin());
}

void GalerkinField::jacobian(std::span<const double>, std::span<double> out) const {
  const auto d = hess_.rows();
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out[static_cast<std::size_t>(i * d + j)] = hess_(i, j);
  }
}

double unit_sphere_area(std::size_t d) {
  const double h = 0.5 * static_cast<double>(d);
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

FundamentalField::FundamentalField(ParticleMatrix sources, std::vector<double> m,
                                   double epsilon)
    : y_(std::move(sources)), eps_(epsilon) {
  if (static_cast<std::size_t>(y_.rows()) != m.size() || m.empty()) {
    throw Error(ErrorCode::invalid_argument, "fundamental field: m length differs from N");
  }
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::non_positive_parameter, "fundamental field: epsilon must be > 0");
  }
  const double mbar = mean(m);
  w_.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) w_[i] = m[i] - mbar;
  inv_omega_ = 1.0 / unit_sphere_area(static_cast<std::size_t>(y_.cols()));
}

void FundamentalField::value(std::span<const double> x, std::span<double> out) const {
  const std::size_t n = w_.size();
  const std::size_t d = dim();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = y_(idx(i), idx(k)) - x[k];
      r2 += diff * diff;
    }
    if (r2 == 0.0) continue;  // self-interaction
    const double r = std::max(std::sqrt(r2), eps_);
    s[i] = w_[i] / std::pow(r, static_cast<double>(d));
  }
  const double scale = inv_omega_ / static_cast<double>(n);
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = scale * pairwise_sum(0, n, [&](std::size_t i) {
               return s[i] == 0.0 ? 0.0 : (y_(idx(i), idx(k)) - x[k]) * s[i];
             });
  }
}

GaussianDividedField::GaussianDividedField(std::shared_ptr<const Field> f,
                                           const GaussianFit& fit, double floor)
    : f_(std::move(f)), mean_(fit.mean), floor_(floor) {
  Eigen::LLT<Matrix> llt(fit.cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::singular_covariance, "density fit covariance is not positive definite");
  }
  prec_ = llt.solve(Matrix::Identity(fit.cov.rows(), fit.cov.cols()));
  const Matrix L = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
  log_norm_ = 0.5 * (static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) + logdet);
}

double GaussianDividedField::density(std::span<const double> x) const {
  const Vector z = as_vector(x) - mean_;
  return std::exp(-0.5 * z.dot(prec_ * z) - log_norm_);
}

void GaussianDividedField::value(std::span<const double> x, std::span<double> out) const {
  f_->value(x, out);
  const double rho = std::max(density(x), floor_);
  for (double& v : out) v /= rho;
}

// ---------------------------------------------------------------------------
// Solvers

GainSolution solve_exact_gaussian(const Moments& moments, const RowVector& H) {
  if (H.size() != moments.cov.rows()) {
    throw Error(ErrorCode::invalid_argument, "H and covariance dimensions differ");
  }
  Eigen::LLT<Matrix> llt(moments.cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::singular_covariance, "exact Gaussian gain needs SPD covariance");
  }
  GainSolution s;
  s.field = std::make_shared<ConstantField>(moments.cov * H.transpose());
  s.diagnostics.method = "exact_gaussian";
  return s;
}

GainSolution solve_constant_gain(const Moments& moments) {
  GainSolution s;
  s.field = std::make_shared<ConstantField>(moments.cov_xh);
  s.diagnostics.method = "constant_gain";
  return s;
}

GainSolution solve_1d_integral(const Density1D& density, const SystemModel& model,
                               PoissonKind kind, const Field* prior_gain, double floor) {
  if (model.dim() != 1) throw Error(ErrorCode::dimension_error, "1D integral solver needs d = 1");
  const UniformGrid& g = density.grid;
  const std::size_t n = g.n;
  if (n < 3 || density.values.size() != n) {
    throw Error(ErrorCode::invalid_argument, "1D integral solver: malformed density grid");
  }
  const std::vector<double>& rho = density.values;
  const double mass = trapezoid(rho, g.dx);
  if (!(mass > 0.0)) throw Error(ErrorCode::non_positive_density, "density has no mass");

  std::vector<double> h(n), tmp(n), f(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g.x(i);
    h[i] = model.obs({&x, 1});
  }
  auto grid_mean = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = v[i] * rho[i];
    return trapezoid(tmp, g.dx) / mass;
  };

  double sign = 1.0;  // flux = sign * cumulative integral of f
  switch (kind) {
    case PoissonKind::fpf_phi:
    case PoissonKind::crisan_beta: {
      const double hbar = grid_mean(h);
      for (std::size_t i = 0; i < n; ++i) f[i] = (h[i] - hbar) * rho[i];
      sign = -1.0;
      break;
    }
    case PoissonKind::fpf_psi: {
      if (!prior_gain) {
        throw Error(ErrorCode::invalid_argument, "psi equation needs the solved phi gain");
      }
      std::vector<double> r(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = g.x(i);
        double dh = 0.0, k = 0.0;
        model.obs_grad({&x, 1}, {&dh, 1});
        prior_gain->value({&x, 1}, {&k, 1});
        r[i] = dh * k;
      }
      const double rbar = grid_mean(r);
      for (std::size_t i = 0; i < n; ++i) f[i] = (r[i] - rbar) * rho[i];
      break;
    }
    case PoissonKind::reich_omega:
    case PoissonKind::crisan_alpha: {
      std::vector<double> h2(n);
      for (std::size_t i = 0; i < n; ++i) h2[i] = h[i] * h[i];
      const double h2bar = grid_mean(h2);
      for (std::size_t i = 0; i < n; ++i) f[i] = 0.5 * (h2[i] - h2bar) * rho[i];
      break;
    }
  }

  // Integrate inward from both ends, starting from the closed-form tail
  // beyond the grid, and switch sides at the flux peak so neither tail
  // inherits the cancellation of the bulk.
  auto end_tail = [&](std::size_t i0, std::size_t i1, std::size_t i2) {
    const double r[3] = {rho[i0], rho[i1], rho[i2]};
    double q[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < 3; ++j) {
      if (r[j] > 0.0) q[j] = f[j == 0 ? i0 : j == 1 ? i1 : i2] / r[j];
    }
    return tail_integral(q, r, g.dx);
  };
  const double tail_left = end_tail(0, 1, 2);
  const double tail_right = end_tail(n - 1, n - 2, n - 3);
  std::vector<double> left = cumulative_integral(f, g.dx);
  std::vector<double> right(f.rbegin(), f.rend());
  right = cumulative_integral(right, g.dx);
  std::reverse(right.begin(), right.end());
  std::size_t split = 0;
  for (std::size_t i = 0; i < n; ++i) {
    left[i] += tail_left;
    right[i] += tail_right;
    if (std::abs(left[i]) > std::abs(left[split])) split = i;
  }
  std::vector<double> flux(n);
  for (std::size_t i = 0; i < n; ++i) flux[i] = i <= split ? sign * left[i] : -sign * right[i];

  GainSolution s;
  auto& diag = s.diagnostics;
  diag.method = "integral_1d";
  diag.epsilon = floor;
  diag.bandwidth = density.bandwidth.value_or(0.0);
  diag.tail = std::max({std::abs(left.back() - tail_left), std::abs(tail_left) + std::abs(tail_right),
                       (std::abs(f.front()) + std::abs(f.back())) * (g.x_end() - g.x0)});
  if (diag.tail > kTailTolerance) {
    std::ostringstream os;
    os << "grid truncates the right-hand side of " << to_string(kind) << " by " << diag.tail
       << " (> 1e-6); widen the grid";
    throw Error(ErrorCode::unresolved_tail, os.str());
  }

  std::vector<double> field(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double den = std::max(rho[i], floor);
    field[i] = den > 0.0 ? flux[i] / den : 0.0;
  }

  // Divergence residual of the flux where the floor is inactive.
  const std::vector<double> dflux = derivative(flux, g.dx);
  double res = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (rho[i] >= floor) res = std::max(res, std::abs(dflux[i] - sign * f[i]));
  }
  diag.residual = res;

  // Potential of the field, centred against the density.
  s.potential = cumulative_integral(field, g.dx);
  const double c = grid_mean(s.potential);
  for (double& v : s.potential) v -= c;
  diag.centring = std::abs(grid_mean(s.potential));

  s.field = std::make_shared<GridField1D>(g, std::move(field));
  return s;
}

GainSolution solve_galerkin(const Ensemble& ens, const SystemModel& model, PoissonKind kind,
                            const Basis& basis, const std::optional<Matrix>& mass_inverse,
                            const Field* prior_gain) {
  const std::size_t N = ens.size();
  const std::size_t d = ens.dim();
  if (d != model.dim() || basis.dim() != d) {
    throw Error(ErrorCode::invalid_argument, "Galerkin: ensemble, model and basis dimensions differ");
  }
  if (kind == PoissonKind::crisan_alpha || kind == PoissonKind::crisan_beta) {
    throw Error(ErrorCode::invalid_argument,
                "Galerkin applies to the weighted equations only (fpf_phi, fpf_psi, reich_omega)");
  }
  const std::size_t B = basis.size();
  if (N <= B) throw Error(ErrorCode::invalid_argument, "Galerkin needs more particles than basis functions");
  if (mass_inverse && (mass_inverse->rows() != idx(d) || mass_inverse->cols() != idx(d))) {
    throw Error(ErrorCode::invalid_argument, "Galerkin: mass matrix shape mismatch");
  }
  const auto& x = ens.particles();

  std::vector<double> bvals(N * B), grads(N * B * d);
  detail::parallel_for(N, [&](std::size_t i) {
    const auto xi = row_span(x, idx(i));
    basis.values(xi, {bvals.data() + i * B, B});
    basis.gradients(xi, {grads.data() + i * B * d, B * d});
  });

  // Per-particle right-hand side values.
  const std::vector<double> h = observe(ens, model);
  std::vector<double> q(N);
  double load_sign = 1.0;
  switch (kind) {
    case PoissonKind::fpf_phi:
      q = h;
      break;
    case PoissonKind::fpf_psi: {
      if (!prior_gain) throw Error(ErrorCode::invalid_argument, "psi equation needs the solved phi gain");
      detail::parallel_for(N, [&](std::size_t i) {
        const auto xi = row_span(x, idx(i));
        std::vector<double> dh(d), k(d);
        model.obs_grad(xi, dh);
        prior_gain->value(xi, k);
        double r = 0.0;
        for (std::size_t j = 0; j < d; ++j) r += dh[j] * k[j];
        q[i] = r;
      });
      load_sign = -1.0;
      break;
    }
    case PoissonKind::reich_omega:
      for (std::size_t i = 0; i < N; ++i) q[i] = 0.5 * h[i] * h[i];
      load_sign = -1.0;
      break;
    default:
      break;
  }

  const Matrix Minv = mass_inverse ? *mass_inverse : Matrix::Identity(idx(d), idx(d));
  Matrix A(idx(B), idx(B));
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t k = j; k < B; ++k) {
      const double v = pairwise_sum(0, N, [&](std::size_t i) {
                         const double* gj = grads.data() + (i * B + j) * d;
                         const double* gk = grads.data() + (i * B + k) * d;
                         double acc = 0.0;
                         for (std::size_t a = 0; a < d; ++a) {
                           for (std::size_t b = 0; b < d; ++b) acc += gj[a] * Minv(idx(a), idx(b)) * gk[b];
                         }
                         return acc;
                       }) / static_cast<double>(N);
      A(idx(j), idx(k)) = v;
      A(idx(k), idx(j)) = v;
    }
  }
  Vector L(idx(B));
  std::vector<double> bj(N);
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t i = 0; i < N; ++i) bj[i] = bvals[i * B + j];
    L(idx(j)) = load_sign * sample_cov(q, bj);
  }

  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxCondition)) {
    std::ostringstream os;
    os << "Galerkin stiffness condition number " << cond << " exceeds 1e12";
    throw Error(ErrorCode::ill_conditioned, os.str());
  }
  const Matrix Ar = A + kRidge * Matrix::Identity(idx(B), idx(B));
  const Eigen::LDLT<Matrix> ldlt(Ar);
  Vector c = ldlt.solve(L);
  // Refinement against the unridged system removes the ridge bias.
  for (int it = 0; it < 4; ++it) c += ldlt.solve(L - A * c);

  GainSolution s;
  s.stiffness = A;
  s.load = L;
  auto& diag = s.diagnostics;
  diag.method = "galerkin";
  diag.condition = cond;
  diag.residual = (A * c - L).cwiseAbs().maxCoeff();

  s.potential.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < B; ++j) v += c(idx(j)) * bvals[i * B + j];
    s.potential[i] = v;
  }
  const double pm = mean(s.potential);
  for (double& v : s.potential) v -= pm;
  diag.centring = std::abs(mean(s.potential));

  s.field = std::make_shared<GalerkinField>(basis, c, mass_inverse);
  return s;
}

GainSolution solve_fundamental_mc(const Ensemble& ens, std::span<const double> m,
                                  std::optional<double> epsilon) {
  const std::size_t d = ens.dim();
  if (d < 2) {
    throw Error(ErrorCode::dimension_error,
                "fundamental-solution gain needs d >= 2; use the 1D integral solver");
  }
  const double eps = epsilon ? *epsilon
                             : std::pow(static_cast<double>(ens.size()), -1.0 / static_cast<double>(d));
  GainSolution s;
  s.field = std::make_shared<FundamentalField>(ens.particles(),
                                               std::vector<double>(m.begin(), m.end()), eps);
  s.diagnostics.method = "fundamental_mc";
  s.diagnostics.epsilon = eps;
  return s;
}

// ---------------------------------------------------------------------------
// Assembly

std::string_view to_string(FilterKind k) noexcept {
  switch (k) {
    case FilterKind::delta_fpf: return "delta_fpf";
    case FilterKind::delta_reich: return "delta_reich";
    case FilterKind::crisan_xiong: return "crisan_xiong";
    case FilterKind::fpf_continuous: return "fpf_continuous";
    case FilterKind::crisan_continuous: return "crisan_continuous";
    case FilterKind::enkbf: return "enkbf";
  }
  return "unknown";
}

std::string_view to_string(GainMethod m) noexcept {
  switch (m) {
    case GainMethod::exact_gaussian: return "exact_gaussian";
    case GainMethod::constant_gain: return "constant_gain";
    case GainMethod::galerkin: return "galerkin";
    case GainMethod::integral_1d: return "integral_1d";
    case GainMethod::fundamental_mc: return "fundamental_mc";
  }
  return "unknown";
}

FilterKind parse_filter_kind(std::string_view s) {
  for (auto k : {FilterKind::delta_fpf, FilterKind::delta_reich, FilterKind::crisan_xiong,
                 FilterKind::fpf_continuous, FilterKind::crisan_continuous, FilterKind::enkbf}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown filter kind '" + std::string(s) + "'");
}

GainMethod parse_gain_method(std::string_view s) {
  for (auto m : {GainMethod::exact_gaussian, GainMethod::constant_gain, GainMethod::galerkin,
                 GainMethod::integral_1d, GainMethod::fundamental_mc}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown gain method '" + std::string(s) + "'");
}

MassMatrix parse_mass_matrix(std::string_view s) {
  for (auto m : {MassMatrix::identity, MassMatrix::rho_identity, MassMatrix::cov_inverse}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown mass matrix '" + std::string(s) + "'");
}

bool is_continuous(FilterKind k) noexcept {
  return k == FilterKind::fpf_continuous || k == FilterKind::crisan_continuous;
}

namespace {

void merge(GainDiagnostics& into, const GainDiagnostics& from) {
  into.residual = std::max(into.residual, from.residual);
  into.centring = std::max(into.centring, from.centring);
  into.condition = std::max(into.condition, from.condition);
  into.epsilon = std::max(into.epsilon, from.epsilon);
  into.tail = std::max(into.tail, from.tail);
  into.bandwidth = std::max(into.bandwidth, from.bandwidth);
}

void count_floor(GainDiagnostics& diag, std::size_t active, std::size_t n) {
  diag.floor_active = active;
  diag.degenerate_density = static_cast<double>(active) > 0.1 * static_cast<double>(n);
}

std::size_t floored_particles_1d(const Density1D& rho, const Ensemble& ens, double floor) {
  std::size_t c = 0;
  const auto& x = ens.particles();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (interpolate_uniform(rho.values, rho.grid.x0, rho.grid.dx, x(i, 0)) < floor) ++c;
  }
  return c;
}

/// The Crisan-Xiong form. The Reich filter with M = rho I routes here too,
/// so both produce the same coefficients bit for bit.
FilterCoefficients crisan_coefficients(FilterKind kind, const GainOptions& opts,
                                       const Ensemble& ens, const SystemModel& model,
                                       const Moments& mom);

FilterCoefficients exact_coefficients(FilterKind kind, const GainOptions& opts,
                                      const Ensemble& ens, const SystemModel& model,
                                      const Moments& mom) {
  if (!model.is_linear_gaussian()) {
    throw Error(ErrorCode::model_mismatch, "exact Gaussian gain needs a linear-Gaussian model");
  }
  const RowVector& H = model.H();
  GainSolution k = solve_exact_gaussian(mom, H);
  FilterCoefficients c;
  c.gain = k.field;
  c.diagnostics = k.diagnostics;
  c.h_bar = mom.h_bar;
  switch (kind) {
    case FilterKind::enkbf:
      c.innovation_weight = -0.5;
      c.h_bar = H.dot(mom.mean.transpose());
      return c;
    case FilterKind::delta_fpf:
    case FilterKind::fpf_continuous:
      c.innovation_weight = -0.5;
      c.ito_correction = kind == FilterKind::fpf_continuous;
      return c;
    case FilterKind::delta_reich:
      if (opts.mass_matrix == MassMatrix::rho_identity) {
        return crisan_coefficients(FilterKind::crisan_xiong, opts, ens, model, mom);
      }
      if (opts.mass_matrix == MassMatrix::identity && model.dim() != 1) {
        throw Error(ErrorCode::dimension_error,
                    "exact Reich gain with M = I is closed-form only in d = 1; use galerkin");
      }
      break;
    case FilterKind::crisan_xiong:
    case FilterKind::crisan_continuous:
      return crisan_coefficients(kind, opts, ens, model, mom);
  }
  // a = -(1/2) P H^T H (x + x_bar)
  const Matrix G = -0.5 * mom.cov * H.transpose() * H;
  c.drift = std::make_shared<AffineField>(G, G * mom.mean);
  c.innovation_weight = 0.0;
  return c;
}

FilterCoefficients crisan_coefficients(FilterKind kind, const GainOptions& opts,
                                       const Ensemble& ens, const SystemModel& model,
                                       const Moments& mom) {
  const bool continuous = kind == FilterKind::crisan_continuous;
  const std::size_t d = model.dim();
  if (continuous && d != 1) {
    throw Error(ErrorCode::dimension_error, "continuous Crisan-Xiong filter is implemented for d = 1 only");
  }
  FilterCoefficients c;
  c.h_bar = mom.h_bar;
  c.innovation_weight = continuous ? -0.5 : 0.0;
  c.ito_correction = continuous;

  switch (opts.method) {
    case GainMethod::exact_gaussian: {
      if (!model.is_linear_gaussian()) {
        throw Error(ErrorCode::model_mismatch, "exact Gaussian gain needs a linear-Gaussian model");
      }
      if (d != 1) {
        throw Error(ErrorCode::dimension_error,
                    "exact Crisan-Xiong coefficients are closed-form only in d = 1");
      }
      const RowVector& H = model.H();
      GainSolution k = solve_exact_gaussian(mom, H);
      c.gain = k.field;
      c.diagnostics = k.diagnostics;
      if (!continuous) {
        const Matrix G = -0.5 * mom.cov * H.transpose() * H;
        c.drift = std::make_shared<AffineField>(G, G * mom.mean);
      }
      return c;
    }
    case GainMethod::constant_gain: {
      GainSolution k = solve_constant_gain(mom);
      c.gain = k.field;
      c.diagnostics = k.diagnostics;
      if (!continuous) {
        std::vector<double> half_h2 = observe(ens, model);
        for (double& v : half_h2) v = 0.5 * v * v;
        c.drift = std::make_shared<ConstantField>(-sample_cov_x(ens, half_h2));
      }
      return c;
    }
    case GainMethod::integral_1d: {
      if (d != 1) throw Error(ErrorCode::dimension_error, "integral_1d gain needs d = 1");
      const Density1D rho = opts.density == DensityEstimate::kde ? kde_density_1d(ens, opts.kde)
                                                                 : gaussian_density_1d(ens, opts.kde);
      GainSolution beta = solve_1d_integral(rho, model, PoissonKind::crisan_beta, nullptr,
                                            opts.density_floor);
      c.gain = beta.field;
      c.diagnostics = beta.diagnostics;
      if (!continuous) {
        GainSolution alpha = solve_1d_integral(rho, model, PoissonKind::crisan_alpha, nullptr,
                                               opts.density_floor);
        c.drift = alpha.field;
        merge(c.diagnostics, alpha.diagnostics);
      }
      count_floor(c.diagnostics, floored_particles_1d(rho, ens, opts.density_floor), ens.size());
      return c;
    }
    case GainMethod::fundamental_mc: {
      const std::vector<double> h = observe(ens, model);
      std::vector<double> half_h2(h.size());
      for (std::size_t i = 0; i < h.size(); ++i) half_h2[i] = -0.5 * h[i] * h[i];
      GainSolution beta = solve_fundamental_mc(ens, h, opts.kernel_epsilon);
      GainSolution alpha = solve_fundamental_mc(ens, half_h2, opts.kernel_epsilon);
      const GaussianFit fit = gaussian_fit(ens);
      auto K = std::make_shared<GaussianDividedField>(beta.field, fit, opts.density_floor);
      c.gain = K;
      c.drift = std::make_shared<GaussianDividedField>(alpha.field, fit, opts.density_floor);
      c.diagnostics = beta.diagnostics;
      std::size_t active = 0;
      const auto& x = ens.particles();
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (K->density(row_span(x, i)) < opts.density_floor) ++active;
      }
      count_floor(c.diagnostics, active, ens.size());
      return c;
    }
    case GainMethod::galerkin:
      break;
  }
  throw Error(ErrorCode::invalid_argument,
              "gain method " + std::string(to_string(opts.method)) +
                  " does not apply to the Crisan-Xiong form");
}

FilterCoefficients weighted_coefficients(FilterKind kind, const GainOptions& opts,
                                         const Ensemble& ens, const SystemModel& model,
                                         const Moments& mom) {
  const std::size_t d = model.dim();
  const bool fpf = kind == FilterKind::delta_fpf || kind == FilterKind::fpf_continuous;
  const bool continuous = kind == FilterKind::fpf_continuous;
  FilterCoefficients c;
  c.h_bar = mom.h_bar;
  c.innovation_weight = fpf ? -0.5 : 0.0;
  c.ito_correction = continuous;

  switch (opts.method) {
    case GainMethod::constant_gain: {
      GainSolution k = solve_constant_gain(mom);
      c.gain = k.field;
      c.diagnostics = k.diagnostics;
      if (continuous) return c;
      std::vector<double> q;
      if (fpf) {
        // grad psi from the linear-basis weak form: -Cov(x, r), r = grad h . K.
        const auto& x = ens.particles();
        const Vector& K = mom.cov_xh;
        q.resize(ens.size());
        detail::parallel_for(ens.size(), [&](std::size_t i) {
          std::vector<double> dh(d);
          model.obs_grad(row_span(x, idx(i)), dh);
          q[i] = as_vector(std::span<const double>(dh)).dot(K);
        });
        c.drift = std::make_shared<ConstantField>(-0.5 * sample_cov_x(ens, q));
      } else {
        q = observe(ens, model);
        for (double& v : q) v = 0.5 * v * v;
        c.drift = std::make_shared<ConstantField>(-sample_cov_x(ens, q));
      }
      return c;
    }
    case GainMethod::galerkin: {
      const Basis basis(opts.basis, mom.mean);
      std::optional<Matrix> minv;
      if (!fpf && opts.mass_matrix == MassMatrix::cov_inverse) minv = mom.cov;
      GainSolution k = solve_galerkin(ens, model, PoissonKind::fpf_phi, basis, minv);
      c.gain = k.field;
      c.diagnostics = k.diagnostics;
      if (continuous) return c;
      if (fpf) {
        GainSolution psi = solve_galerkin(ens, model, PoissonKind::fpf_psi, basis, {}, k.field.get());
        c.drift = std::make_shared<ScaledField>(psi.field, 0.5);
        merge(c.diagnostics, psi.diagnostics);
      } else {
        GainSolution om = solve_galerkin(ens, model, PoissonKind::reich_omega, basis, minv);
        c.drift = om.field;
        merge(c.diagnostics, om.diagnostics);
      }
      return c;
    }
    case GainMethod::integral_1d: {
      if (d != 1) throw Error(ErrorCode::dimension_error, "integral_1d gain needs d = 1");
      // In d = 1 every mass matrix gives the same coefficients.
      const Density1D rho = opts.density == DensityEstimate::kde ? kde_density_1d(ens, opts.kde)
                                                                 : gaussian_density_1d(ens, opts.kde);
      GainSolution k = solve_1d_integral(rho, model, PoissonKind::fpf_phi, nullptr, opts.density_floor);
      c.gain = k.field;
      c.diagnostics = k.diagnostics;
      if (!continuous) {
        if (fpf) {
          GainSolution psi = solve_1d_integral(rho, model, PoissonKind::fpf_psi, k.field.get(),
                                               opts.density_floor);
          c.drift = std::make_shared<ScaledField>(psi.field, 0.5);
          merge(c.diagnostics, psi.diagnostics);
        } else {
          GainSolution om = solve_1d_integral(rho, model, PoissonKind::reich_omega, nullptr,
                                              opts.density_floor);
          c.drift = om.field;
          merge(c.diagnostics, om.diagnostics);
        }
      }
      count_floor(c.diagnostics, floored_particles_1d(rho, ens, opts.density_floor), ens.size());
      return c;
    }
    default:
      break;
  }
  throw Error(ErrorCode::invalid_argument,
              "gain method " + std::string(to_string(opts.method)) + " does not apply to " +
                  std::string(to_string(kind)));
}

}  // namespace

FilterCoefficients assemble_filter_coefficients(FilterKind kind, const GainOptions& opts,
                                                const Ensemble& ens, const SystemModel& model) {
  if (ens.dim() != model.dim()) {
    throw Error(ErrorCode::invalid_argument, "ensemble and model dimensions differ");
  }
  const std::vector<double> h = observe(ens, model);
  const Moments mom = compute_moments(ens, h);

  FilterCoefficients c;
  if (kind == FilterKind::enkbf) {
    if (opts.method != GainMethod::exact_gaussian) {
      throw Error(ErrorCode::invalid_argument, "the EnKBF uses the exact Gaussian gain P H^T");
    }
    c = exact_coefficients(kind, opts, ens, model, mom);
  } else if (kind == FilterKind::delta_reich && opts.mass_matrix == MassMatrix::rho_identity) {
    c = crisan_coefficients(FilterKind::crisan_xiong, opts, ens, model, mom);
  } else if (kind == FilterKind::crisan_xiong || kind == FilterKind::crisan_continuous) {
    c = crisan_coefficients(kind, opts, ens, model, mom);
  } else if (opts.method == GainMethod::exact_gaussian) {
    c = exact_coefficients(kind, opts, ens, model, mom);
  } else {
    c = weighted_coefficients(kind, opts, ens, model, mom);
  }
  if (c.diagnostics.method.empty()) c.diagnostics.method = std::string(to_string(opts.method));
  return c;
}

GainField evaluate_at_particles(const FilterCoefficients& c, GainMethod method,
                                const Ensemble& ens) {
  const std::size_t N = ens.size();
  const std::size_t d = ens.dim();
  GainField out{ParticleMatrix(idx(N), idx(d)), std::nullopt, method, c.diagnostics};
  if (c.drift) out.aux_drift = ParticleMatrix(idx(N), idx(d));
  const auto& x = ens.particles();
  detail::parallel_for(N, [&](std::size_t i) {
    const auto xi = row_span(x, idx(i));
    c.gain->value(xi, row_span(out.at_particles, idx(i)));
    if (c.drift) c.drift->value(xi, row_span(*out.aux_drift, idx(i)));
  });
  if (!out.at_particles.allFinite() || (out.aux_drift && !out.aux_drift->allFinite())) {
    throw Error(ErrorCode::non_finite_state, "gain field is not finite at the particles");
  }
  return out;
}

}  // namespace flowfilter
