// Small numerical kernels shared across modules: fixed-order summation,
// uniform-grid quadrature, interpolation and rank statistics.
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace flowfilter {

namespace detail {
inline constexpr std::size_t kPairwiseLeaf = 16;
}

/// Pairwise (cascade) sum of term(i) for i in [begin, end). The summation
/// tree depends only on the range, so results are reproducible bit for bit.
template <class Term>
double pairwise_sum(std::size_t begin, std::size_t end, const Term& term) {
  const std::size_t n = end - begin;
  if (n <= detail::kPairwiseLeaf) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = begin + n / 2;
  return pairwise_sum(begin, mid, term) + pairwise_sum(mid, end, term);
}

double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);

/// Trapezoidal integral of equally spaced samples.
double trapezoid(std::span<const double> values, double dx);

/// Cumulative integral F_i = int_{x_0}^{x_i} f using the trapezoid rule plus
/// the Euler-Maclaurin endpoint correction -(dx^2/12)(f'(x_i) - f'(x_0)),
/// with f' from fourth-order finite differences (second-order below five
/// samples). F_0 = 0.
std::vector<double> cumulative_integral(std::span<const double> f, double dx);

/// Second-order finite-difference derivative of equally spaced samples
/// (central inside, one-sided at the ends).
std::vector<double> derivative(std::span<const double> f, double dx);

/// Linear interpolation on the uniform grid x0 + i*dx. Values outside the
/// grid are clamped to the end samples.
double interpolate_uniform(std::span<const double> values, double x0,
                           double dx, double x);

/// Spearman rank correlation (average ranks for ties). Returns NaN for
/// fewer than two points or a constant input.
double spearman(std::span<const double> a, std::span<const double> b);

inline double normal_pdf(double x, double mean, double var) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / var) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace flowfilter
