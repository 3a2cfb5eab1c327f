// Uniform 1D grids and tabulated densities on them.
#pragma once

#include "flowfilter/numerics.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace flowfilter {

struct UniformGrid {
  double x0 = 0.0;
  double dx = 1.0;
  std::size_t n = 0;

  double x(std::size_t i) const noexcept { return x0 + static_cast<double>(i) * dx; }
  double x_end() const noexcept { return x(n == 0 ? 0 : n - 1); }
  std::vector<double> points() const;

  /// n points spanning [-half_width, half_width].
  static UniformGrid symmetric(double half_width, std::size_t n);

  bool operator==(const UniformGrid&) const = default;
};

/// Tabulated 1D density. `bandwidth` is set when built by kernel smoothing.
struct Density1D {
  UniformGrid grid;
  std::vector<double> values;
  std::optional<double> bandwidth;

  double mass() const { return trapezoid(values, grid.dx); }

  /// Trapezoidal integral of f(x) * values(x).
  template <class F>
  double integrate(F&& f) const {
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) g[i] = f(grid.x(i)) * values[i];
    return trapezoid(g, grid.dx);
  }

  double mean() const;
  double variance() const;
};

/// Gaussian pdf tabulated on a grid, renormalised to unit trapezoidal mass.
Density1D gaussian_table(const UniformGrid& grid, double mean, double var);

/// Rescales values so the trapezoidal mass is one.
void normalise(Density1D& density);

}  // namespace flowfilter
