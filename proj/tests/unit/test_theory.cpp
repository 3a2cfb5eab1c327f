#include "catch.hpp"
#include "oracles.hpp"

#include "flowfilter/reference.hpp"
#include "flowfilter/theory.hpp"

#include <cmath>
#include <numbers>

using namespace flowfilter;
using Catch::Approx;

namespace {

Density1D gaussian_grid(double var, std::size_t n = 4001) {
  return gaussian_table(UniformGrid::symmetric(10.0 * std::sqrt(var), n), 0.0, var);
}

// Smoothed indicator of [-L, L] with edge width w.
Density1D plateau(double L, double w, double a = 1.0) {
  const auto g = UniformGrid::symmetric(a * (L + 6.0 * w), 4001);
  Density1D d{g, std::vector<double>(g.n), std::nullopt};
  for (std::size_t i = 0; i < g.n; ++i) {
    const double x = g.x(i) / a;
    d.values[i] = 0.5 * (std::tanh((x + L) / w) - std::tanh((x - L) / w)) / a;
  }
  normalise(d);
  return d;
}

}  // namespace

TEST_CASE("kappa_continuous examples") {
  const auto b = kappa_continuous(1.0, 1.0, 2.0);
  CHECK(b.constant == 0.5);
  CHECK(b.provenance == BoundProvenance::continuous_posterior);
  CHECK(kappa_continuous(3.0, 5.0, 2.0).constant == 1.0 / 4.0);
  CHECK(kappa_continuous(1e-9, 1e-9, 1e-9).constant > 1e8);
  for (auto bad : {std::array<double, 3>{0, 1, 1}, {1, -1, 1}, {1, 1, 0}}) {
    try {
      kappa_continuous(bad[0], bad[1], bad[2]);
      FAIL("expected non-positive parameter");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::non_positive_parameter);
    }
  }
}

TEST_CASE("bounds recompute bit-exactly from their inputs") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::array<double, 7> u{};
    standard_normals(s, Stream::test, 0, 0, u);
    for (double& v : u) v = std::exp(0.5 * v);
    const auto b = kappa_continuous(u[0], u[1], u[2]);
    CHECK(b.constant > 0.0);
    CHECK(recompute(b) == b.constant);
    const auto kd = kappa_delta(u[0], u[1], u[2], u[3], u[4], u[5], u[6]);
    CHECK(kd.bound.constant > 0.0);
    CHECK(recompute(kd.bound) == kd.bound.constant);
    const auto lt = lipschitz_transfer(b, u[3]);
    CHECK(recompute(lt) == lt.constant);
  }
  EmpiricalPoincare e = empirical_poincare_1d(gaussian_grid(1.0, 401));
  PoincareBound emp{e.kappa, BoundProvenance::empirical, {}, std::nullopt};
  CHECK_THROWS_AS(recompute(emp), Error);
}

TEST_CASE("gamma fixed point for c_r = 2, dt = 1") {
  const double g = gamma_fixed_point(2.0, 1.0);
  CHECK(std::abs(g - (-2.0 + std::sqrt(20.0)) / 4.0) <= 1e-12);
  CHECK(g == Approx(0.6180339887).epsilon(1e-10));
  CHECK(std::abs(gamma_map(g, 2.0, 1.0) - g) <= 1e-12);
}

TEST_CASE("gamma fixed point tends to sqrt(c_r / 2) as dt shrinks") {
  double prev = INFINITY;
  for (double dt : {1e-1, 1e-2, 1e-3}) {
    const double err = std::abs(gamma_fixed_point(2.0, dt) - 1.0);
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev <= 1e-3);
  CHECK(std::abs(gamma_fixed_point(8.0, 1e-4) - 2.0) <= 1e-3);
}

TEST_CASE("gamma trace started at the fixed point is constant") {
  const double g = gamma_fixed_point(2.0, 0.5);
  const auto tr = gamma_recursion(1.0, 2.0, 0.5, 30, g);
  for (double v : tr.gamma) CHECK(std::abs(v - g) <= 1e-12);
  CHECK(tr.monotone());
  CHECK(tr.fixed_point_residual <= 1e-12);
}

TEST_CASE("gamma traces are monotone with the computable floor") {
  for (std::uint64_t s = 0; s < 40; ++s) {
    std::array<double, 3> u{};
    standard_normals(s, Stream::test, 1, 0, u);
    const double c_g = std::exp(u[0]), c_r = std::exp(u[1]), dt = std::exp(u[2] - 2.0);
    const auto tr = gamma_recursion(c_g, c_r, dt, 200);
    CHECK(tr.gamma.front() == c_g);
    CHECK(tr.monotone());
    CHECK(tr.fixed_point_residual <= 1e-12);
    CHECK(tr.minimum >= std::min(c_g, tr.fixed_point) - 1e-12);
    if (c_g > tr.fixed_point) {
      for (std::size_t i = 1; i < tr.gamma.size(); ++i) CHECK(tr.gamma[i] <= tr.gamma[i - 1] + 1e-15);
    } else {
      for (std::size_t i = 1; i < tr.gamma.size(); ++i) CHECK(tr.gamma[i] >= tr.gamma[i - 1] - 1e-15);
    }
  }
}

TEST_CASE("the sqrt(c_r/2) floor holds only as dt -> 0") {
  // gamma* < sqrt(c_r/2) for every dt > 0, so a trace started above
  // sqrt(c_r/2) descends below it. The closed-form floor min(c_g, gamma*)
  // is what holds at finite dt.
  const auto tr = gamma_recursion(3.0, 2.0, 1.0, 50);
  CHECK(tr.minimum < std::min(3.0, std::sqrt(1.0)) - 1e-9);
  CHECK(tr.minimum >= std::min(3.0, tr.fixed_point) - 1e-12);
  const auto fine = gamma_recursion(3.0, 2.0, 1e-4, 100000);
  CHECK(fine.minimum >= std::min(3.0, std::sqrt(1.0)) - 1e-4);
}

TEST_CASE("gamma recursion parameter checks") {
  CHECK_THROWS_AS(gamma_recursion(0.0, 1.0, 0.1, 5), Error);
  CHECK_THROWS_AS(gamma_recursion(1.0, -1.0, 0.1, 5), Error);
  CHECK_THROWS_AS(gamma_recursion(1.0, 1.0, 0.0, 5), Error);
}

TEST_CASE("kappa_delta examples") {
  CHECK(kappa_delta(1.7, 0.0, 2.0, 1.0, 1.0, 0.1, 3.0).bound.constant == 1.7);
  const auto k = kappa_delta(1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0);
  CHECK(std::abs(k.bound.constant - 2.0 * std::exp(3.0)) <= 1e-12);
  CHECK(k.bound.provenance == BoundProvenance::smoothed_posterior);
  try {
    kappa_delta(1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0);
    FAIL("expected non-positive delta");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_positive_delta);
  }
}

TEST_CASE("kappa_delta without a sensor is the signal-only constant") {
  for (double L : {0.0, 0.3, 1.5}) {
    for (double T : {0.0, 0.5, 2.0}) {
      const auto k = kappa_delta(0.8, T, L, 0.0, 0.0, 0.05, 4.0);
      CHECK(k.bound.constant == k.signal_only);
      CHECK(k.signal_only == std::exp(2.0 * L * T) * (0.8 + T));
    }
  }
}

TEST_CASE("kappa_delta is nondecreasing in every argument but delta") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    std::array<double, 8> u{};
    standard_normals(s, Stream::test, 2, 0, u);
    std::array<double, 7> a{};
    for (std::size_t i = 0; i < 7; ++i) a[i] = 0.3 * std::exp(0.5 * u[i]);
    const double base = kappa_delta(a[0], a[1], a[2], a[3], a[4], a[5], a[6]).bound.constant;
    const std::size_t which = static_cast<std::size_t>(s % 7);
    auto b = a;
    // Larger delta shrinks the (T/delta)^2 term; every other input grows.
    b[which] *= which == 5 ? 0.8 : 1.25;
    const double bumped = kappa_delta(b[0], b[1], b[2], b[3], b[4], b[5], b[6]).bound.constant;
    CHECK(bumped >= base);
  }
}

TEST_CASE("lipschitz transfer examples") {
  const auto one = kappa_continuous(0.5, 0.5, 0.5);  // kappa = 1
  REQUIRE(one.constant == 1.0);
  const auto two = lipschitz_transfer(one, 2.0);
  CHECK(two.constant == 4.0);
  REQUIRE(two.stated_constant.has_value());
  CHECK(*two.stated_constant == 2.0);
  CHECK(two.provenance == BoundProvenance::lipschitz_transfer);
  CHECK(lipschitz_transfer(one, 1.0).constant == 1.0);
  const auto four = lipschitz_transfer(one, 2.0);
  CHECK(lipschitz_transfer(four, 0.5).constant == 1.0);
}

TEST_CASE("Gaussian dilation agrees with the squared transfer rule") {
  // N(0,1) pushed through x -> 2x is N(0,4); its spectral constant is 4.
  const auto base = empirical_poincare_1d(gaussian_grid(1.0));
  const auto image = empirical_poincare_1d(gaussian_grid(4.0));
  const PoincareBound b{base.kappa, BoundProvenance::empirical, {}, std::nullopt};
  const auto t = lipschitz_transfer(b, 2.0);
  CHECK(image.kappa == Approx(t.constant).epsilon(0.02));
  CHECK(std::abs(image.kappa - *t.stated_constant) > 1.0);
}

TEST_CASE("affine push-forward of a non-Gaussian density") {
  // rho(x) ~ exp(-x^4/4 - x^2/2), pushed by x -> a x + b.
  for (double a : {0.5, 3.0}) {
    const double b = 1.3;
    const auto g0 = UniformGrid::symmetric(6.0, 4001);
    Density1D d0{g0, std::vector<double>(g0.n), std::nullopt};
    for (std::size_t i = 0; i < g0.n; ++i) {
      const double x = g0.x(i);
      d0.values[i] = std::exp(-0.25 * x * x * x * x - 0.5 * x * x);
    }
    normalise(d0);
    const UniformGrid g1{a * g0.x0 + b, a * g0.dx, g0.n};
    Density1D d1{g1, d0.values, std::nullopt};
    normalise(d1);
    const auto k0 = empirical_poincare_1d(d0);
    const auto k1 = empirical_poincare_1d(d1);
    const PoincareBound base{k0.kappa, BoundProvenance::empirical, {}, std::nullopt};
    CHECK(k1.kappa == Approx(lipschitz_transfer(base, a).constant).epsilon(0.02));
  }
}

TEST_CASE("empirical Poincare constant of a Gaussian is its variance") {
  for (double var : {0.25, 1.0, 3.0}) {
    const auto e = empirical_poincare_1d(gaussian_grid(var));
    CHECK(e.kappa == Approx(var).epsilon(0.01));
    CHECK(e.certified);
    CHECK(e.lambda1 == Approx(1.0 / e.kappa));
    CHECK(e.rayleigh == Approx(e.lambda1).epsilon(1e-6));
  }
}

TEST_CASE("empirical Poincare constant of a plateau") {
  const double L = 1.0;
  const auto e = empirical_poincare_1d(plateau(L, 0.01));
  CHECK(e.kappa == Approx((2.0 * L) * (2.0 * L) / (std::numbers::pi * std::numbers::pi)).epsilon(0.02));
}

TEST_CASE("empirical Poincare constant scales by a^2") {
  const auto a1 = empirical_poincare_1d(plateau(1.0, 0.1));
  for (double a : {0.5, 2.0}) {
    const auto aa = empirical_poincare_1d(plateau(1.0, 0.1, a));
    CHECK(aa.kappa == Approx(a * a * a1.kappa).epsilon(1e-6));
  }
}

TEST_CASE("empirical Poincare eigenfunction is rho-centred and normalised") {
  const auto d = gaussian_grid(1.0, 1001);
  const auto e = empirical_poincare_1d(d);
  REQUIRE(e.eigenfunction.size() == d.grid.n);
  std::vector<double> f1(d.grid.n), f2(d.grid.n);
  for (std::size_t i = 0; i < d.grid.n; ++i) {
    f1[i] = e.eigenfunction[i] * d.values[i];
    f2[i] = e.eigenfunction[i] * e.eigenfunction[i] * d.values[i];
  }
  CHECK(std::abs(trapezoid(f1, d.grid.dx)) <= 1e-8);
  CHECK(trapezoid(f2, d.grid.dx) == Approx(1.0).epsilon(1e-8));
  // The Hermite eigenfunction is odd.
  CHECK(std::abs(e.eigenfunction[d.grid.n / 2]) <= 1e-6);
}

TEST_CASE("empirical Poincare needs a positive density") {
  auto d = gaussian_grid(1.0, 401);
  d.values[10] = 0.0;
  try {
    empirical_poincare_1d(d);
    FAIL("expected non-positive density");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_positive_density);
  }
}

TEST_CASE("Brascamp-Lieb examples") {
  const auto d = gaussian_grid(1.0);
  const auto lin = brascamp_lieb_check(d, [](double x) { return x; }, [](double) { return 1.0; });
  CHECK(lin.passed);
  CHECK(lin.variance == Approx(1.0).margin(1e-6));
  CHECK(std::abs(lin.variance - lin.bound) <= 1e-6);
  CHECK(lin.min_curvature == Approx(1.0).margin(1e-4));

  const auto sq = brascamp_lieb_check(d, [](double x) { return x * x; });
  CHECK(sq.passed);
  CHECK(sq.variance == Approx(2.0).margin(1e-5));
  CHECK(sq.bound == Approx(4.0).margin(1e-4));

  const auto c = brascamp_lieb_check(d, [](double) { return 5.0; });
  CHECK(c.passed);
  CHECK(c.variance == Approx(0.0).margin(1e-12));
  CHECK(c.bound == Approx(0.0).margin(1e-12));
}

TEST_CASE("Brascamp-Lieb on a scaled Gaussian") {
  const auto d = gaussian_grid(2.5);
  const auto r = brascamp_lieb_check(d, [](double x) { return 3.0 * x + 1.0; });
  CHECK(r.passed);
  CHECK(r.variance == Approx(9.0 * 2.5).epsilon(1e-6));
  CHECK(r.bound == Approx(r.variance).epsilon(1e-5));
}

TEST_CASE("Brascamp-Lieb rejects a bimodal density") {
  const auto g = UniformGrid::symmetric(8.0, 1601);
  Density1D d{g, std::vector<double>(g.n), std::nullopt};
  for (std::size_t i = 0; i < g.n; ++i) {
    d.values[i] = 0.5 * normal_pdf(g.x(i), -2.0, 0.5) + 0.5 * normal_pdf(g.x(i), 2.0, 0.5);
  }
  try {
    brascamp_lieb_check(d, [](double x) { return x; });
    FAIL("expected not log-concave");
  } catch (const NotLogConcave& e) {
    CHECK(e.code() == ErrorCode::not_log_concave);
    CHECK(std::abs(e.witness()) < 2.0);
  }
}

TEST_CASE("posterior constants on the OU benchmark stay below the continuous bound") {
  // U = -x^2/2, H = 1, rho0 = N(0, 0.5): c_u = 1, c_g = 1, c_r = 4.
  const auto spec = quadratic_ou_spec(1, 1.0, 1.0);
  auto s4 = spec;
  s4.c_r = 4.0;
  RowVector H = RowVector::Ones(1);
  const auto init = InitialDensity::gaussian(Vector::Zero(1), Matrix::Constant(1, 1, 0.5));
  const auto model = make_log_concave_ou(s4, H, lattice_cloud(1, 5.0, 0.25), init);
  const double kappa = kappa_continuous(1.0, 1.0, 4.0).constant;
  const TimeGrid tg(0.0, 1.0, 0.001, 0.01);
  const std::array<double, 1> x0{0.4};
  const auto tr = simulate_truth(model, tg, x0, GaussianIncrements(3, Stream::signal));
  const auto path = simulate_observations(model, tr, tg, GaussianIncrements(3, Stream::observation));
  const auto prior = gaussian_table(UniformGrid::symmetric(8.0, 801), 0.0, 0.5);
  const auto run = run_grid_kushner(model, prior, path, false, {0.0, 0.5, 1.0});
  REQUIRE(run.snapshots.size() == 3);
  for (const auto& snap : run.snapshots) {
    // Trim the far tails where the explicit solver leaves round-off noise.
    const auto d = snap.as_density();
    double peak = 0.0;
    for (double v : d.values) peak = std::max(peak, v);
    std::size_t lo = 0, hi = d.grid.n - 1;
    while (d.values[lo] < 1e-14 * peak) ++lo;
    while (d.values[hi] < 1e-14 * peak) --hi;
    Density1D w{{d.grid.x(lo), d.grid.dx, hi - lo + 1},
                std::vector<double>(d.values.begin() + static_cast<std::ptrdiff_t>(lo),
                                    d.values.begin() + static_cast<std::ptrdiff_t>(hi) + 1),
                std::nullopt};
    const auto e = empirical_poincare_1d(w);
    INFO("t = " << snap.time << " kappa_emp = " << e.kappa);
    CHECK(e.kappa <= kappa * 1.02);
  }
}
