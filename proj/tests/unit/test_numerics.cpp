#include "catch.hpp"
#include "oracles.hpp"

#include "flowfilter/csv.hpp"
#include "flowfilter/grid.hpp"
#include "flowfilter/numerics.hpp"
#include "flowfilter/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

using namespace flowfilter;
using Catch::Approx;

TEST_CASE("philox known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("normals are a pure function of their coordinates") {
  std::array<double, 5> a{}, b{}, c{}, d{};
  standard_normals(11, Stream::particles, 7, 3, a);
  standard_normals(11, Stream::particles, 7, 3, b);
  CHECK(a == b);
  standard_normals(11, Stream::observation, 7, 3, c);
  standard_normals(11, Stream::particles, 7, 4, d);
  CHECK(a != c);
  CHECK(a != d);
  // A prefix request sees the same leading values.
  std::array<double, 2> p{};
  standard_normals(11, Stream::particles, 7, 3, p);
  CHECK(p[0] == a[0]);
  CHECK(p[1] == a[1]);
}

TEST_CASE("test-stream normals have unit moments") {
  const auto x = oracle::normals(200000, 1, 5);
  double m = 0.0, v = 0.0, k = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) m += x(i, 0);
  m /= static_cast<double>(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double z = x(i, 0) - m;
    v += z * z;
    k += z * z * z * z;
  }
  v /= static_cast<double>(x.rows() - 1);
  k /= static_cast<double>(x.rows());
  CHECK(std::abs(m) < 4.0 / std::sqrt(2e5));
  CHECK(v == Approx(1.0).margin(0.01));
  CHECK(k == Approx(3.0).margin(0.06));
}

TEST_CASE("gaussian increments scale with dt") {
  GaussianIncrements g(3, Stream::signal);
  std::array<double, 1> a{}, b{};
  g.draw(10, 2, 1.0, a);
  g.draw(10, 2, 0.25, b);
  CHECK(b[0] == Approx(0.5 * a[0]).epsilon(1e-15));
  ZeroIncrements z;
  z.draw(0, 0, 1.0, a);
  CHECK(a[0] == 0.0);
}

TEST_CASE("bridge refinement preserves coarse increments") {
  GaussianIncrements coarse(9, Stream::signal);
  BridgeRefinedIncrements fine(coarse, 9);
  const double dt = 0.01;
  for (std::uint64_t k = 0; k < 50; ++k) {
    std::array<double, 2> c{}, f0{}, f1{};
    coarse.draw(k, 4, 2.0 * dt, c);
    fine.draw(2 * k, 4, dt, f0);
    fine.draw(2 * k + 1, 4, dt, f1);
    for (int j = 0; j < 2; ++j) CHECK(f0[j] + f1[j] == Approx(c[j]).margin(1e-15));
  }
  // Fine increments have variance dt.
  double s = 0.0;
  const int n = 40000;
  for (int k = 0; k < n; ++k) {
    std::array<double, 1> f{};
    fine.draw(static_cast<std::uint64_t>(k), 0, dt, f);
    s += f[0] * f[0];
  }
  CHECK(s / n == Approx(dt).epsilon(0.03));
}

TEST_CASE("pairwise sum is exact on representable sums and order-fixed") {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  CHECK(pairwise_sum(v) == 499500.0);
  CHECK(mean(v) == 499.5);
  std::vector<double> w(1 << 20, 0.1);
  const double naive = [&] {
    double s = 0.0;
    for (double x : w) s += x;
    return s;
  }();
  CHECK(std::abs(pairwise_sum(w) - 104857.6) < std::abs(naive - 104857.6));
}

TEST_CASE("quadrature and differencing kernels") {
  const auto g = UniformGrid::symmetric(1.0, 201);
  std::vector<double> f(g.n), df(g.n);
  for (std::size_t i = 0; i < g.n; ++i) f[i] = g.x(i) * g.x(i);
  // trapezoid of x^2 on [-1,1]: 2/3 + dx^2/6 error term.
  CHECK(trapezoid(f, g.dx) == Approx(2.0 / 3.0 + g.dx * g.dx / 3.0).epsilon(1e-12));
  const auto F = cumulative_integral(f, g.dx);
  CHECK(F.front() == 0.0);
  CHECK(F.back() == Approx(2.0 / 3.0).margin(1e-12));
  const auto d = derivative(f, g.dx);
  for (std::size_t i = 0; i < g.n; ++i) CHECK(d[i] == Approx(2.0 * g.x(i)).margin(1e-10));
  CHECK(interpolate_uniform(f, g.x0, g.dx, 5.0) == f.back());
  CHECK(interpolate_uniform(f, g.x0, g.dx, -5.0) == f.front());
  CHECK(interpolate_uniform(f, g.x0, g.dx, 0.5 * (g.x(3) + g.x(4))) ==
        Approx(0.5 * (f[3] + f[4])).epsilon(1e-14));
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> a{1, 2, 3, 4}, up{10, 20, 30, 40}, down{4, 3, 2, 1};
  CHECK(spearman(a, up) == Approx(1.0));
  CHECK(spearman(a, down) == Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2};
  CHECK(spearman(a, ties) == Approx(0.894427191).epsilon(1e-9));
  CHECK(std::isnan(spearman(std::vector<double>{1.0}, std::vector<double>{2.0})));
  CHECK(std::isnan(spearman(a, std::vector<double>{1, 1, 1, 1})));
}

TEST_CASE("gaussian table has unit trapezoidal mass") {
  const auto d = gaussian_table(UniformGrid::symmetric(10.0, 4001), 0.3, 2.0);
  CHECK(d.mass() == Approx(1.0).margin(1e-10));
  CHECK(d.mean() == Approx(0.3).margin(1e-10));
  CHECK(d.variance() == Approx(2.0).margin(1e-8));
}

TEST_CASE("csv numbers round-trip exactly") {
  CsvTable t;
  t.header = {"a", "b"};
  const double tricky = 0.1 + 0.2;
  t.rows.push_back({format_double(tricky), format_double(-1e-300)});
  t.rows.push_back({format_double(std::numbers::pi), "x"});
  std::stringstream ss;
  write_csv(ss, t);
  const auto back = read_csv(ss);
  CHECK(back.header == t.header);
  REQUIRE(back.rows.size() == 2);
  CHECK(parse_double(back.rows[0][0]) == tricky);
  CHECK(parse_double(back.rows[0][1]) == -1e-300);
  CHECK(parse_double(back.rows[1][0]) == std::numbers::pi);
  CHECK(back.column("b") == 1);
  CHECK_THROWS_AS(back.column("zzz"), Error);
  CHECK_THROWS_AS(parse_double("1.5abc"), Error);
}

TEST_CASE("worker count setting") {
  const int before = worker_threads();
  set_worker_threads(3);
  CHECK(worker_threads() >= 1);
  set_worker_threads(before);
  CHECK(worker_threads() == before);
}
