#include "flowfilter/grid.hpp"

#include "flowfilter/common.hpp"

#include <cmath>

namespace flowfilter {

std::vector<double> UniformGrid::points() const {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = x(i);
  return p;
}

UniformGrid UniformGrid::symmetric(double half_width, std::size_t n) {
  if (!(half_width > 0.0) || n < 3) {
    throw Error(ErrorCode::invalid_argument,
                "symmetric grid needs half_width > 0 and at least 3 points");
  }
  return {-half_width, 2.0 * half_width / static_cast<double>(n - 1), n};
}

double Density1D::mean() const {
  return integrate([](double x) { return x; }) / mass();
}

double Density1D::variance() const {
  const double m = mean();
  return integrate([m](double x) { return (x - m) * (x - m); }) / mass();
}

Density1D gaussian_table(const UniformGrid& grid, double mean, double var) {
  if (!(var > 0.0)) {
    throw Error(ErrorCode::singular_covariance, "gaussian_table needs var > 0");
  }
  Density1D d{grid, std::vector<double>(grid.n), std::nullopt};
  for (std::size_t i = 0; i < grid.n; ++i) d.values[i] = normal_pdf(grid.x(i), mean, var);
  normalise(d);
  return d;
}

void normalise(Density1D& density) {
  const double m = density.mass();
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw Error(ErrorCode::non_positive_density, "density has no positive mass");
  }
  for (double& v : density.values) v /= m;
}

}  // namespace flowfilter
