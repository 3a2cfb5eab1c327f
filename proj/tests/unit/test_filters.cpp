#include "catch.hpp"
#include "oracles.hpp"

#include "flowfilter/filters.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <set>

using namespace flowfilter;
using Catch::Approx;

namespace {

SystemModel lg1(double a, double h) {
  return make_linear_gaussian(Matrix::Constant(1, 1, a), RowVector::Constant(1, h));
}

ParticleMatrix column(std::initializer_list<double> v) {
  ParticleMatrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

FilterState make_state(FilterKind kind, const ParticleMatrix& x, GainOptions g = {}) {
  return FilterState(Ensemble(x), make_filter_spec(kind, std::move(g)));
}

GainOptions integral_gain() {
  GainOptions g;
  g.method = GainMethod::integral_1d;
  return g;
}

ObservationPath simulated_path(const SystemModel& m, const TimeGrid& g, double x0,
                               std::uint64_t seed) {
  const std::array<double, 1> x{x0};
  const auto tr = simulate_truth(m, g, x, GaussianIncrements(seed, Stream::signal));
  return simulate_observations(m, tr, g, GaussianIncrements(seed, Stream::observation));
}

double max_moment_gap(const FilterRun& a, const FilterRun& b) {
  REQUIRE(a.moments.size() == b.moments.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.moments.size(); ++i) {
    worst = std::max(worst, (a.moments[i].mean - b.moments[i].mean).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.moments[i].cov - b.moments[i].cov).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("hand-evaluated update x' = 1.5") {
  const auto m = make_scalar_model("id", [](double) { return 0.0; }, [](double x) { return x; },
                                   [](double) { return 1.0; });
  Ensemble e(column({1.0, -1.0}));
  FilterCoefficients c;
  c.gain = std::make_shared<ConstantField>(Vector::Constant(1, 2.0));
  c.innovation_weight = -0.5;
  c.h_bar = 0.0;
  advance_particles(e, m, c, 3.0 * 0.1, 0.1, ZeroIncrements{}, 0);
  CHECK(e.particles()(0, 0) == Approx(1.5).epsilon(1e-15));
}

TEST_CASE("EnKBF frozen example") {
  auto s = make_state(FilterKind::enkbf, column({1.0, -1.0}));
  step_enkbf(s, lg1(0.0, 1.0), 3.0 * 0.1, 0.1, ZeroIncrements{});
  CHECK(s.ensemble.particles()(0, 0) == Approx(1.5).epsilon(1e-15));
  CHECK(s.time == Approx(0.1));
  CHECK(s.step == 1);
  CHECK(s.step_log.size() == 1);
}

TEST_CASE("EnKBF refuses nonlinear models") {
  auto s = make_state(FilterKind::enkbf, column({1.0, -1.0}));
  try {
    step_enkbf(s, make_tanh_model(1.0), 0.1, 0.1, ZeroIncrements{});
    FAIL("expected model mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::model_mismatch);
  }
  auto t = make_state(FilterKind::delta_fpf, column({1.0, -1.0}));
  CHECK_THROWS_AS(step_enkbf(t, lg1(0.0, 1.0), 0.1, 0.1, ZeroIncrements{}), Error);
  CHECK_THROWS_AS(step_delta_fpf(t, lg1(0.0, 1.0), 0.1, 0.0, ZeroIncrements{}), Error);
}

TEST_CASE("delta-FPF step equals the EnKBF step on linear-Gaussian models") {
  const auto lg = lg1(-0.5, 1.0);
  const auto x = oracle::gaussian_cloud(2000, 1.0, 0.5, 3);
  GaussianIncrements noise(4, Stream::particles);
  auto a = make_state(FilterKind::delta_fpf, x);
  auto b = make_state(FilterKind::enkbf, x);
  for (int k = 0; k < 5; ++k) {
    step_delta_fpf(a, lg, 0.8, 0.001, noise);
    step_enkbf(b, lg, 0.8 * 0.001, 0.001, noise);
  }
  CHECK(oracle::max_abs_diff(a.ensemble.particles(), b.ensemble.particles()) <= 1e-14);
}

TEST_CASE("every delta-filter is the EnKBF on linear-Gaussian models") {
  const auto lg = lg1(-0.5, 1.0);
  const auto x = oracle::gaussian_cloud(1000, 1.0, 0.5, 5);
  GaussianIncrements noise(6, Stream::particles);
  auto ref = make_state(FilterKind::enkbf, x);
  step_enkbf(ref, lg, -0.4 * 0.01, 0.01, noise);

  for (auto mm : {MassMatrix::cov_inverse, MassMatrix::identity, MassMatrix::rho_identity}) {
    GainOptions o;
    o.mass_matrix = mm;
    auto s = make_state(FilterKind::delta_reich, x, o);
    step_delta_reich(s, lg, -0.4, 0.01, noise);
    CHECK(oracle::max_abs_diff(s.ensemble.particles(), ref.ensemble.particles()) <= 1e-13);
  }
  auto c = make_state(FilterKind::crisan_xiong, x);
  step_crisan_xiong(c, lg, -0.4, 0.01, noise);
  CHECK(oracle::max_abs_diff(c.ensemble.particles(), ref.ensemble.particles()) <= 1e-13);
}

TEST_CASE("continuous kinds with constant gains are the EnKBF driven by dZ") {
  const auto lg = lg1(-0.5, 1.0);
  const auto x = oracle::gaussian_cloud(1000, 1.0, 0.5, 7);
  GaussianIncrements noise(8, Stream::particles);
  auto ref = make_state(FilterKind::enkbf, x);
  auto f = make_state(FilterKind::fpf_continuous, x);
  auto c = make_state(FilterKind::crisan_continuous, x);
  const double dz = 0.037;
  step_enkbf(ref, lg, dz, 0.01, noise);
  step_fpf_continuous(f, lg, dz, 0.01, noise);
  step_crisan_continuous(c, lg, dz, 0.01, noise);
  CHECK(oracle::max_abs_diff(f.ensemble.particles(), ref.ensemble.particles()) <= 1e-14);
  CHECK(oracle::max_abs_diff(c.ensemble.particles(), ref.ensemble.particles()) <= 1e-14);
}

TEST_CASE("Ito correction of K(x) = x is x/2") {
  const auto m = make_scalar_model("zero", [](double) { return 0.0; }, [](double) { return 0.0; },
                                   [](double) { return 0.0; });
  Ensemble e(column({0.4, -1.2, 2.0}));
  const auto before = e.particles();
  FilterCoefficients c;
  c.gain = std::make_shared<AffineField>(Matrix::Identity(1, 1), Vector::Zero(1));
  c.ito_correction = true;
  const double dt = 0.01;
  advance_particles(e, m, c, 0.0, dt, ZeroIncrements{}, 0);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(e.particles()(i, 0) == Approx(before(i, 0) + 0.5 * before(i, 0) * dt).epsilon(1e-15));
  }
}

TEST_CASE("constant observations leave only the prediction step") {
  const auto flat = make_scalar_model("flat", [](double x) { return -x; }, [](double) { return 0.3; },
                                      [](double) { return 0.0; });
  const auto x = oracle::gaussian_cloud(500, 0.2, 1.0, 9);
  GaussianIncrements noise(10, Stream::particles);
  Ensemble pred(x);
  FilterCoefficients none;
  none.gain = std::make_shared<ConstantField>(Vector::Zero(1));
  advance_particles(pred, flat, none, 0.0, 0.01, noise, 0);

  auto check = [&](FilterKind kind, GainOptions g) {
    INFO(to_string(kind));
    auto s = make_state(kind, x, g);
    step_filter(s, flat, 0.05, 0.01, noise);
    CHECK(oracle::max_abs_diff(s.ensemble.particles(), pred.particles()) <= 1e-14);
  };
  for (auto k : {FilterKind::delta_fpf, FilterKind::delta_reich, FilterKind::crisan_xiong,
                 FilterKind::fpf_continuous, FilterKind::crisan_continuous}) {
    check(k, integral_gain());
  }
  GainOptions rho = integral_gain();
  rho.mass_matrix = MassMatrix::rho_identity;
  check(FilterKind::delta_reich, rho);

  // Zero-sensor linear-Gaussian model through the EnKBF.
  const auto lg0 = lg1(-1.0, 0.0);
  auto e = make_state(FilterKind::enkbf, x);
  step_enkbf(e, lg0, 0.05, 0.01, noise);
  Ensemble p2(x);
  advance_particles(p2, lg0, none, 0.0, 0.01, noise, 0);
  CHECK(oracle::max_abs_diff(e.ensemble.particles(), p2.particles()) <= 1e-15);
}

TEST_CASE("Reich with rho mass matrix is bitwise the Crisan-Xiong step") {
  const auto model = make_tanh_model(1.0);
  const auto x = oracle::gaussian_cloud(1500, 0.3, 0.8, 11);
  GaussianIncrements noise(12, Stream::particles);
  GainOptions rho = integral_gain();
  rho.mass_matrix = MassMatrix::rho_identity;
  auto r = make_state(FilterKind::delta_reich, x, rho);
  auto c = make_state(FilterKind::crisan_xiong, x, integral_gain());
  for (int k = 0; k < 3; ++k) {
    step_delta_reich(r, model, 1.1, 0.001, noise);
    step_crisan_xiong(c, model, 1.1, 0.001, noise);
  }
  CHECK(oracle::max_abs_diff(r.ensemble.particles(), c.ensemble.particles()) == 0.0);
}

TEST_CASE("continuous FPF and continuous Crisan-Xiong agree in d = 1") {
  const auto model = make_tanh_model(1.0);
  const auto x = oracle::gaussian_cloud(1500, -0.2, 1.2, 13);
  GaussianIncrements noise(14, Stream::particles);
  auto f = make_state(FilterKind::fpf_continuous, x, integral_gain());
  auto c = make_state(FilterKind::crisan_continuous, x, integral_gain());
  for (int k = 0; k < 3; ++k) {
    step_fpf_continuous(f, model, 0.02, 0.001, noise);
    step_crisan_continuous(c, model, 0.02, 0.001, noise);
  }
  CHECK(oracle::max_abs_diff(f.ensemble.particles(), c.ensemble.particles()) <= 1e-12);
  // d >= 2 has no continuous Crisan-Xiong form.
  const auto lg2 = make_linear_gaussian(Matrix::Zero(2, 2), RowVector::Ones(2));
  auto c2 = make_state(FilterKind::crisan_continuous, oracle::normals(50, 2, 1));
  try {
    step_crisan_continuous(c2, lg2, 0.01, 0.01, noise);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_error);
  }
}

TEST_CASE("particle noise counters advance once per particle per step") {
  const std::size_t n = 257;
  std::mutex mu;
  std::multiset<std::pair<std::uint64_t, std::uint64_t>> seen;
  ScriptedIncrements rec([&](std::uint64_t step, std::uint64_t index, double, std::span<double> o) {
    std::lock_guard<std::mutex> lk(mu);
    seen.insert({step, index});
    o[0] = 0.0;
  });
  auto s = make_state(FilterKind::enkbf, oracle::normals(n, 1, 2));
  const auto lg = lg1(0.0, 1.0);
  const int before = worker_threads();
  set_worker_threads(4);
  for (int k = 0; k < 3; ++k) step_enkbf(s, lg, 0.0, 0.01, rec);
  set_worker_threads(before);
  CHECK(seen.size() == 3 * n);
  for (std::uint64_t k = 0; k < 3; ++k) {
    for (std::uint64_t i = 0; i < n; ++i) CHECK(seen.count({k, i}) == 1);
  }
}

TEST_CASE("EnKBF mean update matches the Kalman-Bucy drift") {
  const auto lg = lg1(-0.7, 1.3);
  const auto x = oracle::gaussian_cloud(400, 0.6, 0.9, 15);
  const double slope = 0.45;
  const auto m0 = compute_moments(Ensemble(x), lg);
  const double expected = -0.7 * m0.mean(0) + m0.cov(0, 0) * 1.3 * (slope - 1.3 * m0.mean(0));
  double prev = INFINITY;
  for (double dt : {1e-2, 1e-3, 1e-4}) {
    auto s = make_state(FilterKind::enkbf, x);
    step_enkbf(s, lg, slope * dt, dt, ZeroIncrements{});
    const double rate = (compute_moments(s.ensemble, lg).mean(0) - m0.mean(0)) / dt;
    const double err = std::abs(rate - expected);
    CHECK(err <= std::max(1e-12 / dt, 1e-9));
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
}

TEST_CASE("run_filter with a zero-length horizon returns the initial moments") {
  const TimeGrid g(0.0, 0.0, 0.001, 0.01);
  const ObservationPath p(g, {0.0});
  const auto x = oracle::gaussian_cloud(100, 1.0, 0.5, 16);
  const auto lg = lg1(-0.5, 1.0);
  const auto run = run_filter(make_filter_spec(FilterKind::enkbf), lg, p, x, ZeroIncrements{});
  REQUIRE(run.ok());
  REQUIRE(run.times.size() == 1);
  CHECK(run.times[0] == 0.0);
  const auto m = compute_moments(Ensemble(x), lg);
  CHECK(run.moments[0].mean == m.mean);
  CHECK(run.moments[0].cov == m.cov);
  CHECK(run.step_log.empty());
}

TEST_CASE("run_filter is bitwise independent of the worker count") {
  const auto model = make_tanh_model(1.0);
  const TimeGrid g(0.0, 0.1, 0.001, 0.01);
  const auto p = simulated_path(model, g, 0.5, 17);
  const auto x = oracle::gaussian_cloud(3000, 0.0, 1.0, 18);
  GaussianIncrements noise(19, Stream::particles);
  for (auto kind : {FilterKind::delta_fpf, FilterKind::crisan_xiong, FilterKind::fpf_continuous}) {
    const auto spec = make_filter_spec(kind, integral_gain());
    const int before = worker_threads();
    set_worker_threads(1);
    const auto a = run_filter(spec, model, p, x, noise);
    set_worker_threads(8);
    const auto b = run_filter(spec, model, p, x, noise);
    set_worker_threads(before);
    REQUIRE(a.ok());
    CHECK(max_moment_gap(a, b) == 0.0);
    CHECK(oracle::max_abs_diff(a.final_particles, b.final_particles) == 0.0);
    CHECK(a.final_particles.rows() == 3000);
    CHECK(a.times.size() == g.mesh_steps() + 1);
  }
}

TEST_CASE("delta-filters share one trajectory on linear-Gaussian models") {
  const auto lg = lg1(-0.5, 1.0);
  const TimeGrid g(0.0, 0.2, 0.001, 0.01);
  const auto p = simulated_path(lg, g, 1.0, 20);
  const auto x = oracle::gaussian_cloud(2000, 1.0, 0.5, 21);
  GaussianIncrements noise(22, Stream::particles);
  GainOptions rho;
  rho.mass_matrix = MassMatrix::rho_identity;
  const auto fpf = run_filter(make_filter_spec(FilterKind::delta_fpf), lg, p, x, noise);
  const auto reich = run_filter(make_filter_spec(FilterKind::delta_reich, rho), lg, p, x, noise);
  const auto cx = run_filter(make_filter_spec(FilterKind::crisan_xiong), lg, p, x, noise);
  CHECK(max_moment_gap(fpf, reich) <= 1e-12);
  CHECK(max_moment_gap(fpf, cx) <= 1e-12);
  CHECK(max_moment_gap(reich, cx) <= 1e-12);
}

TEST_CASE("Reich rho-identity and Crisan-Xiong trajectories coincide on a nonlinear model") {
  const auto model = make_tanh_model(1.0);
  const TimeGrid g(0.0, 0.1, 0.001, 0.01);
  const auto p = simulated_path(model, g, 0.4, 23);
  const auto x = oracle::gaussian_cloud(2000, 0.0, 1.0, 24);
  GaussianIncrements noise(25, Stream::particles);
  GainOptions rho = integral_gain();
  rho.mass_matrix = MassMatrix::rho_identity;
  const auto a = run_filter(make_filter_spec(FilterKind::delta_reich, rho), model, p, x, noise);
  const auto b = run_filter(make_filter_spec(FilterKind::crisan_xiong, integral_gain()), model, p, x, noise);
  CHECK(max_moment_gap(a, b) <= 1e-12);
  const auto f = run_filter(make_filter_spec(FilterKind::fpf_continuous, integral_gain()), model, p, x, noise);
  const auto c = run_filter(make_filter_spec(FilterKind::crisan_continuous, integral_gain()), model, p, x, noise);
  CHECK(max_moment_gap(f, c) <= 1e-12);
  // delta-FPF and Crisan-Xiong agree only up to discretisation of their drifts.
  const auto d = run_filter(make_filter_spec(FilterKind::delta_fpf, integral_gain()), model, p, x, noise);
  CHECK(max_moment_gap(d, b) <= 1e-3);
}

TEST_CASE("frozen gains are solved once per mesh interval") {
  const auto model = make_tanh_model(1.0);
  const TimeGrid g(0.0, 0.05, 0.001, 0.01);
  const auto p = simulated_path(model, g, 0.0, 26);
  const auto x = oracle::gaussian_cloud(500, 0.0, 1.0, 27);
  auto spec = make_filter_spec(FilterKind::delta_fpf, integral_gain());
  const auto live = run_filter(spec, model, p, x, ZeroIncrements{});
  spec.freeze_gain_per_mesh = true;
  const auto frozen = run_filter(spec, model, p, x, ZeroIncrements{});
  CHECK(live.step_log.size() == g.fine_steps());
  CHECK(frozen.step_log.size() == g.mesh_steps());
  CHECK(frozen.times == live.times);
}

TEST_CASE("record_fine records every fine step") {
  const auto lg = lg1(-0.5, 1.0);
  const TimeGrid g(0.0, 0.02, 0.001, 0.01);
  const auto p = simulated_path(lg, g, 0.0, 28);
  const auto run = run_filter(make_filter_spec(FilterKind::enkbf), lg, p,
                              oracle::gaussian_cloud(100, 0.0, 1.0, 29), ZeroIncrements{}, true);
  REQUIRE(run.times.size() == g.fine_steps() + 1);
  for (std::size_t k = 0; k < run.times.size(); ++k) CHECK(run.times[k] == Approx(g.fine_time(k)));
}

TEST_CASE("a failing step keeps the partial trajectory") {
  const auto blow = make_scalar_model("blow", [](double x) { return 1e300 * x; },
                                      [](double x) { return x; }, [](double) { return 1.0; });
  const TimeGrid g(0.0, 0.05, 0.01, 0.01);
  const ObservationPath p(g, std::vector<double>(6, 0.0));
  const auto run = run_filter(make_filter_spec(FilterKind::delta_fpf, integral_gain()), blow, p,
                              oracle::gaussian_cloud(200, 1.0, 0.1, 30), ZeroIncrements{});
  CHECK_FALSE(run.ok());
  REQUIRE(run.failure_code.has_value());
  CHECK(run.failed_step >= 1);
  CHECK(run.times.size() == run.failed_step);
  CHECK_FALSE(run.failure.empty());
}
