#include "flowfilter/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flowfilter {

double pairwise_sum(std::span<const double> values) {
  return pairwise_sum(0, values.size(),
                      [&](std::size_t i) { return values[i]; });
}

double mean(std::span<const double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return pairwise_sum(values) / static_cast<double>(values.size());
}

double trapezoid(std::span<const double> values, double dx) {
  if (values.size() < 2) return 0.0;
  const double interior = pairwise_sum(values);
  return dx * (interior - 0.5 * (values.front() + values.back()));
}

std::vector<double> derivative(std::span<const double> f, double dx) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 3) {
    if (n == 2) d[0] = d[1] = (f[1] - f[0]) / dx;
    return d;
  }
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx);
  return d;
}

namespace {

// Fourth-order differences (five-point central, one-sided near the ends).
std::vector<double> derivative4(std::span<const double> f, double dx) {
  const std::size_t n = f.size();
  std::vector<double> d(n);
  const double s = 1.0 / (12.0 * dx);
  auto fwd0 = [&](std::size_t i, int dir) {
    auto at = [&](int k) { return f[static_cast<std::size_t>(static_cast<int>(i) + dir * k)]; };
    return dir * s * (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4));
  };
  auto fwd1 = [&](std::size_t i, int dir) {
    auto at = [&](int k) { return f[static_cast<std::size_t>(static_cast<int>(i) + dir * k)]; };
    return dir * s * (-3.0 * at(-1) - 10.0 * at(0) + 18.0 * at(1) - 6.0 * at(2) + at(3));
  };
  d[0] = fwd0(0, 1);
  d[1] = fwd1(1, 1);
  d[n - 1] = fwd0(n - 1, -1);
  d[n - 2] = fwd1(n - 2, -1);
  for (std::size_t i = 2; i + 2 < n; ++i) {
    d[i] = s * (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]);
  }
  return d;
}

}  // namespace

std::vector<double> cumulative_integral(std::span<const double> f, double dx) {
  const std::size_t n = f.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  const std::vector<double> df = n >= 5 ? derivative4(f, dx) : derivative(f, dx);
  const double c = dx * dx / 12.0;
  double running = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    running += 0.5 * dx * (f[i - 1] + f[i]);
    out[i] = running - c * (df[i] - df[0]);
  }
  return out;
}

double interpolate_uniform(std::span<const double> values, double x0,
                           double dx, double x) {
  const std::size_t n = values.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (n == 1) return values[0];
  const double s = (x - x0) / dx;
  if (!(s > 0.0)) return values.front();
  if (s >= static_cast<double>(n - 1)) return values.back();
  const auto i = static_cast<std::size_t>(s);
  const double w = s - static_cast<double>(i);
  return (1.0 - w) * values[i] + w * values[i + 1];
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (a.size() != b.size() || a.size() < 2) return nan;
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = mean(ra);
  const double mb = mean(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return nan;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace flowfilter
