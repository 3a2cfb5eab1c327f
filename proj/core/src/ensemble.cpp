#include "flowfilter/ensemble.hpp"

#include "flowfilter/numerics.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace flowfilter {

Ensemble::Ensemble(ParticleMatrix particles) : x_(std::move(particles)) {
  if (x_.rows() < 2 || x_.cols() < 1) {
    throw Error(ErrorCode::invalid_argument, "ensemble needs at least 2 particles");
  }
  if (!x_.allFinite()) throw Error(ErrorCode::non_finite_state, "ensemble has non-finite entries");
}

std::vector<double> observe(const Ensemble& ens, const SystemModel& model) {
  if (ens.dim() != model.dim()) {
    throw Error(ErrorCode::invalid_argument, "ensemble and model dimensions differ");
  }
  std::vector<double> h(ens.size());
  const auto& x = ens.particles();
  detail::parallel_for(ens.size(), [&](std::size_t i) {
    h[i] = model.obs(row_span(x, static_cast<Eigen::Index>(i)));
  });
  return h;
}

Moments compute_moments(const Ensemble& ens, const SystemModel& model) {
  const auto h = observe(ens, model);
  return compute_moments(ens, h);
}

Moments compute_moments(const Ensemble& ens, std::span<const double> h) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  if (h.size() != n) throw Error(ErrorCode::invalid_argument, "h length differs from ensemble size");
  const auto& x = ens.particles();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_n1 = 1.0 / static_cast<double>(n - 1);
  Moments m;
  m.mean.resize(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const auto cj = static_cast<Eigen::Index>(j);
    m.mean(cj) = pairwise_sum(0, n, [&](std::size_t i) {
                   return x(static_cast<Eigen::Index>(i), cj);
                 }) * inv_n;
  }
  m.cov.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = j; k < d; ++k) {
      const auto cj = static_cast<Eigen::Index>(j), ck = static_cast<Eigen::Index>(k);
      const double v = pairwise_sum(0, n, [&](std::size_t i) {
                         const auto r = static_cast<Eigen::Index>(i);
                         return (x(r, cj) - m.mean(cj)) * (x(r, ck) - m.mean(ck));
                       }) * inv_n1;
      m.cov(cj, ck) = v;
      m.cov(ck, cj) = v;
    }
  }
  m.h_bar = pairwise_sum(0, n, [&](std::size_t i) { return h[i]; }) * inv_n;
  m.h2_bar = pairwise_sum(0, n, [&](std::size_t i) { return h[i] * h[i]; }) * inv_n;
  m.cov_xh.resize(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const auto cj = static_cast<Eigen::Index>(j);
    m.cov_xh(cj) = pairwise_sum(0, n, [&](std::size_t i) {
                     return (x(static_cast<Eigen::Index>(i), cj) - m.mean(cj)) * (h[i] - m.h_bar);
                   }) * inv_n1;
  }
  return m;
}

double sample_cov(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) throw Error(ErrorCode::invalid_argument, "sample_cov: bad lengths");
  const double ma = mean(a);
  const double mb = mean(b);
  return pairwise_sum(0, n, [&](std::size_t i) { return (a[i] - ma) * (b[i] - mb); }) /
         static_cast<double>(n - 1);
}

Vector sample_cov_x(const Ensemble& ens, std::span<const double> values) {
  const std::size_t n = ens.size();
  if (values.size() != n) throw Error(ErrorCode::invalid_argument, "sample_cov_x: bad length");
  const auto& x = ens.particles();
  const double mv = mean(values);
  Vector out(static_cast<Eigen::Index>(ens.dim()));
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    const double mx = pairwise_sum(0, n, [&](std::size_t i) {
                        return x(static_cast<Eigen::Index>(i), j);
                      }) / static_cast<double>(n);
    out(j) = pairwise_sum(0, n, [&](std::size_t i) {
               return (x(static_cast<Eigen::Index>(i), j) - mx) * (values[i] - mv);
             }) / static_cast<double>(n - 1);
  }
  return out;
}

double silverman_bandwidth(double sd, std::size_t n) {
  return 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
}

namespace {

struct CloudStats {
  double mean, sd;
};

CloudStats stats_1d(const Ensemble& ens) {
  if (ens.dim() != 1) throw Error(ErrorCode::dimension_error, "1D density needs d = 1");
  const std::span<const double> x(ens.particles().data(), ens.size());
  const double m = mean(x);
  const double var = pairwise_sum(0, x.size(), [&](std::size_t i) {
                       return (x[i] - m) * (x[i] - m);
                     }) / static_cast<double>(x.size() - 1);
  if (!(var >= 1e-14)) {
    throw Error(ErrorCode::degenerate_cloud,
                "sample variance " + std::to_string(var) + " below 1e-14");
  }
  return {m, std::sqrt(var)};
}

UniformGrid density_grid(const CloudStats& s, const KdeOptions& opts) {
  if (opts.points < 3) throw Error(ErrorCode::invalid_argument, "density grid needs >= 3 points");
  const double L = std::max(std::abs(s.mean) + 8.0 * s.sd, opts.min_half_width);
  return UniformGrid::symmetric(L, opts.points);
}

}  // namespace

Density1D kde_density_1d(const Ensemble& ens, const KdeOptions& opts) {
  const CloudStats s = stats_1d(ens);
  const std::size_t n = ens.size();
  const double h = opts.bandwidth ? *opts.bandwidth : silverman_bandwidth(s.sd, n);
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorCode::invalid_argument, "KDE bandwidth must be positive");
  }
  const UniformGrid grid = density_grid(s, opts);
  const std::size_t m = grid.n;
  const std::span<const double> x(ens.particles().data(), n);
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));

  bool exact = opts.evaluation == KdeEvaluation::exact;
  if (opts.evaluation == KdeEvaluation::automatic) {
    exact = static_cast<double>(n) * static_cast<double>(m) <= 4e6;
  }

  Density1D out{grid, std::vector<double>(m, 0.0), h};
  if (exact) {
    detail::parallel_for(m, [&](std::size_t g) {
      const double xg = grid.x(g);
      out.values[g] = norm * pairwise_sum(0, n, [&](std::size_t i) {
                        const double u = (xg - x[i]) / h;
                        return std::exp(-0.5 * u * u);
                      });
    });
  } else {
    // Linear binning onto the grid, then a truncated kernel sum.
    std::vector<double> w(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double pos = (x[i] - grid.x0) / grid.dx;
      pos = std::clamp(pos, 0.0, static_cast<double>(m - 1));
      auto k = static_cast<std::size_t>(pos);
      if (k >= m - 1) k = m - 2;
      const double frac = pos - static_cast<double>(k);
      w[k] += 1.0 - frac;
      w[k + 1] += frac;
    }
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(8.0 * h / grid.dx));
    std::vector<double> kernel(static_cast<std::size_t>(reach) + 1);
    for (std::ptrdiff_t j = 0; j <= reach; ++j) {
      const double u = static_cast<double>(j) * grid.dx / h;
      kernel[static_cast<std::size_t>(j)] = std::exp(-0.5 * u * u);
    }
    const auto sm = static_cast<std::ptrdiff_t>(m);
    detail::parallel_for(m, [&](std::size_t g) {
      const auto sg = static_cast<std::ptrdiff_t>(g);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, sg - reach);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sm - 1, sg + reach);
      double acc = 0.0;
      for (std::ptrdiff_t k = lo; k <= hi; ++k) {
        acc += w[static_cast<std::size_t>(k)] * kernel[static_cast<std::size_t>(std::abs(k - sg))];
      }
      out.values[g] = norm * acc;
    });
  }
  normalise(out);
  return out;
}

GaussianFit gaussian_fit(const Ensemble& ens) {
  const std::vector<double> zero(ens.size(), 0.0);
  Moments m = compute_moments(ens, zero);
  GaussianFit fit{std::move(m.mean), std::move(m.cov), false};
  Eigen::LLT<Matrix> llt(fit.cov);
  if (llt.info() != Eigen::Success) {
    fit.cov += 1e-12 * Matrix::Identity(fit.cov.rows(), fit.cov.cols());
    fit.regularised = true;
  }
  return fit;
}

Density1D gaussian_density_1d(const Ensemble& ens, const KdeOptions& opts) {
  const CloudStats s = stats_1d(ens);
  return gaussian_table(density_grid(s, opts), s.mean, s.sd * s.sd);
}

CsvTable ensemble_table(const Ensemble& ens) {
  CsvTable t;
  t.header.push_back("particle");
  for (std::size_t j = 0; j < ens.dim(); ++j) t.header.push_back("x_" + std::to_string(j + 1));
  for (std::size_t i = 0; i < ens.size(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t j = 0; j < ens.dim(); ++j) {
      row.push_back(format_double(
          ens.particles()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable density_table(const Density1D& density) {
  CsvTable t;
  t.header = {"x", "rho"};
  for (std::size_t i = 0; i < density.values.size(); ++i) {
    t.rows.push_back({format_double(density.grid.x(i)), format_double(density.values[i])});
  }
  return t;
}

}  // namespace flowfilter
