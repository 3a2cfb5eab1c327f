#include "catch.hpp"
#include "oracles.hpp"

#include "flowfilter/ensemble.hpp"

#include <cmath>

using namespace flowfilter;
using Catch::Approx;

namespace {

SystemModel obs_model(std::function<double(double)> h, std::function<double(double)> dh) {
  return make_scalar_model("test", [](double) { return 0.0; }, std::move(h), std::move(dh));
}

const SystemModel& identity_obs() {
  static const SystemModel m = obs_model([](double x) { return x; }, [](double) { return 1.0; });
  return m;
}

ParticleMatrix column(std::initializer_list<double> v) {
  ParticleMatrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("ensemble construction rules") {
  CHECK_THROWS_AS(Ensemble(column({1.0})), Error);
  CHECK_THROWS_AS(Ensemble(column({1.0, std::nan("")})), Error);
  const Ensemble e(column({1.0, 2.0}));
  CHECK(e.size() == 2);
  CHECK(e.dim() == 1);
}

TEST_CASE("two symmetric particles") {
  const auto m = compute_moments(Ensemble(column({-1.0, 1.0})), identity_obs());
  CHECK(m.mean(0) == 0.0);
  CHECK(m.cov(0, 0) == 2.0);
  CHECK(m.h_bar == 0.0);
  CHECK(m.h2_bar == 1.0);
  CHECK(m.cov_xh(0) == 2.0);
}

TEST_CASE("degenerate cloud") {
  const auto h = obs_model([](double x) { return std::cos(x) + 2.0; },
                           [](double x) { return -std::sin(x); });
  const auto m = compute_moments(Ensemble(column({0.0, 0.0, 0.0})), h);
  CHECK(m.cov(0, 0) == 0.0);
  CHECK(m.h_bar == 3.0);
}

TEST_CASE("gaussian moment oracle for h = x^2") {
  const auto h = obs_model([](double x) { return x * x; }, [](double x) { return 2.0 * x; });
  const auto m = compute_moments(Ensemble(oracle::normals(100000, 1, 7)), h);
  CHECK(m.h_bar == Approx(1.0).margin(0.02));
  CHECK(m.h2_bar == Approx(3.0).margin(0.1));
  CHECK(m.h2_bar >= m.h_bar * m.h_bar - 1e-10);
}

TEST_CASE("moment invariants on random clouds") {
  const auto h = obs_model([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = oracle::normals(50 + 17 * seed, 1, seed);
    const auto m = compute_moments(Ensemble(x), h);
    CHECK(m.cov(0, 0) >= -1e-10);
    CHECK(m.h2_bar >= m.h_bar * m.h_bar - 1e-10);
  }
  const auto lg = make_linear_gaussian(Matrix::Zero(3, 3), RowVector::Ones(3));
  const auto x3 = oracle::normals(500, 3, 99);
  const auto m3 = compute_moments(Ensemble(x3), lg);
  CHECK((m3.cov - m3.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m3.cov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("affine equivariance of moments") {
  const auto lg = make_linear_gaussian(Matrix::Zero(2, 2), RowVector::Ones(2));
  const auto x = oracle::normals(1000, 2, 3);
  Matrix a(2, 2);
  a << 2.0, -0.5, 0.3, 1.5;
  Vector b(2);
  b << 4.0, -1.0;
  ParticleMatrix y = (x * a.transpose()).rowwise() + b.transpose();
  const auto mx = compute_moments(Ensemble(x), lg);
  const auto my = compute_moments(Ensemble(y), lg);
  CHECK((my.mean - (a * mx.mean + b)).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((my.cov - a * mx.cov * a.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("moments do not depend on the worker count") {
  const auto x = oracle::normals(20001, 2, 5);
  const auto lg = make_linear_gaussian(Matrix::Zero(2, 2), RowVector::Ones(2));
  const int before = worker_threads();
  set_worker_threads(1);
  const auto a = compute_moments(Ensemble(x), lg);
  set_worker_threads(8);
  const auto b = compute_moments(Ensemble(x), lg);
  set_worker_threads(before);
  CHECK(a.mean == b.mean);
  CHECK(a.cov == b.cov);
  CHECK(a.h_bar == b.h_bar);
  CHECK(a.h2_bar == b.h2_bar);
}

TEST_CASE("kde rejects degenerate clouds") {
  CHECK_THROWS_AS(kde_density_1d(Ensemble(column({2.0, 2.0, 2.0}))), Error);
  try {
    kde_density_1d(Ensemble(column({2.0, 2.0})));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_cloud);
  }
}

TEST_CASE("silverman kde converges to the standard normal") {
  const Ensemble e(oracle::normals(100000, 1, 13));
  const auto d = kde_density_1d(e);
  REQUIRE(d.bandwidth.has_value());
  CHECK(*d.bandwidth == Approx(silverman_bandwidth(1.0, 100000)).epsilon(0.01));
  CHECK(d.mass() == Approx(1.0).margin(1e-8));
  double worst = 0.0;
  for (std::size_t i = 0; i < d.grid.n; ++i) {
    worst = std::max(worst, std::abs(d.values[i] - normal_pdf(d.grid.x(i), 0.0, 1.0)));
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("kde of two symmetric particles is symmetric") {
  KdeOptions o;
  o.bandwidth = 1.0;
  const auto d = kde_density_1d(Ensemble(column({-1.0, 1.0})), o);
  for (std::size_t i = 0; i < d.grid.n; ++i) {
    CHECK(std::abs(d.values[i] - d.values[d.grid.n - 1 - i]) <= 1e-12);
  }
}

TEST_CASE("kde mass and positivity for several clouds and evaluation modes") {
  for (auto mode : {KdeEvaluation::exact, KdeEvaluation::binned, KdeEvaluation::automatic}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto x = oracle::normals(3000, 1, seed);
      x = x.array().cube();  // heavy-ish tails
      KdeOptions o;
      o.evaluation = mode;
      o.points = 1001;
      const auto d = kde_density_1d(Ensemble(x), o);
      CHECK(d.mass() == Approx(1.0).margin(1e-8));
      for (double v : d.values) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("binned and exact kde agree") {
  const Ensemble e(oracle::gaussian_cloud(5000, 0.5, 2.0, 17));
  KdeOptions ex, bi;
  ex.evaluation = KdeEvaluation::exact;
  bi.evaluation = KdeEvaluation::binned;
  const auto a = kde_density_1d(e, ex);
  const auto b = kde_density_1d(e, bi);
  REQUIRE(a.grid == b.grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.grid.n; ++i) worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  CHECK(worst <= 1e-4);
}

TEST_CASE("kde grid half-width rule") {
  const Ensemble e(oracle::gaussian_cloud(2000, 3.0, 0.25, 4));
  const auto m = compute_moments(e, identity_obs());
  const auto d = kde_density_1d(e);
  const double L = std::abs(m.mean(0)) + 8.0 * std::sqrt(m.cov(0, 0));
  CHECK(d.grid.x_end() == Approx(L).epsilon(1e-12));
  KdeOptions wide;
  wide.min_half_width = 20.0;
  CHECK(kde_density_1d(e, wide).grid.x_end() == Approx(20.0).epsilon(1e-12));
}

TEST_CASE("gaussian fit examples") {
  const auto f = gaussian_fit(Ensemble(column({-1.0, 1.0})));
  CHECK(f.mean(0) == 0.0);
  CHECK(f.cov(0, 0) == 2.0);
  CHECK_FALSE(f.regularised);

  const auto x = oracle::normals(400, 2, 8);
  ParticleMatrix y = x.rowwise() + RowVector::Constant(2, 5.0);
  const auto fx = gaussian_fit(Ensemble(x));
  const auto fy = gaussian_fit(Ensemble(y));
  CHECK((fy.mean - fx.mean - Vector::Constant(2, 5.0)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((fy.cov - fx.cov).cwiseAbs().maxCoeff() <= 1e-12);

  const auto g = gaussian_fit(Ensemble(oracle::gaussian_cloud(10000, 3.0, 0.25, 9)));
  CHECK(g.mean(0) == Approx(3.0).margin(0.02));
  CHECK(g.cov(0, 0) == Approx(0.25).margin(0.02));

  const auto s = gaussian_fit(Ensemble(column({1.0, 1.0, 1.0})));
  CHECK(s.regularised);
  CHECK(s.cov(0, 0) == Approx(1e-12));
}

TEST_CASE("gaussian density table matches the fit") {
  const Ensemble e(oracle::gaussian_cloud(2000, -1.0, 0.5, 10));
  const auto fit = gaussian_fit(e);
  const auto d = gaussian_density_1d(e);
  CHECK(d.mass() == Approx(1.0).margin(1e-8));
  CHECK(d.mean() == Approx(fit.mean(0)).margin(1e-8));
  CHECK(d.variance() == Approx(fit.cov(0, 0)).epsilon(1e-6));
}

TEST_CASE("ensemble and density tables") {
  const Ensemble e(column({0.5, -0.25, 2.0}));
  const auto t = ensemble_table(e);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.header.size() == 2);
  CHECK(parse_double(t.rows[2][1]) == 2.0);
  const auto dt = density_table(gaussian_table(UniformGrid::symmetric(4.0, 11), 0.0, 1.0));
  CHECK(dt.rows.size() == 11);
  CHECK(dt.header.size() == 2);
}
