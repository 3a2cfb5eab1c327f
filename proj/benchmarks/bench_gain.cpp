#include "flowfilter/gain.hpp"

#include <benchmark/benchmark.h>

using namespace flowfilter;

namespace {

ParticleMatrix cloud(std::size_t n, std::size_t d, std::uint64_t seed) {
  ParticleMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    standard_normals(seed, Stream::test, i, 0, z);
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z[j];
  }
  return x;
}

void BM_Kde(benchmark::State& state) {
  const Ensemble e(cloud(static_cast<std::size_t>(state.range(0)), 1, 1));
  KdeOptions o;
  o.evaluation = state.range(1) ? KdeEvaluation::binned : KdeEvaluation::exact;
  o.points = 1001;
  for (auto _ : state) benchmark::DoNotOptimize(kde_density_1d(e, o));
}
BENCHMARK(BM_Kde)->ArgsProduct({{1000, 10000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_Integral1D(benchmark::State& state) {
  const auto rho = gaussian_table(UniformGrid::symmetric(10.0, static_cast<std::size_t>(state.range(0))), 0.0, 1.0);
  const auto model = make_tanh_model(1.0);
  for (auto _ : state) benchmark::DoNotOptimize(solve_1d_integral(rho, model, PoissonKind::fpf_phi));
}
BENCHMARK(BM_Integral1D)->Arg(1001)->Arg(4001)->Unit(benchmark::kMicrosecond);

void BM_Galerkin(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(1));
  const Ensemble e(cloud(static_cast<std::size_t>(state.range(0)), d, 2));
  const auto lg = make_linear_gaussian(Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)),
                                       RowVector::Ones(static_cast<Eigen::Index>(d)));
  const Basis basis(Basis::Kind::quadratic, Vector::Zero(static_cast<Eigen::Index>(d)));
  for (auto _ : state) benchmark::DoNotOptimize(solve_galerkin(e, lg, PoissonKind::fpf_phi, basis));
}
BENCHMARK(BM_Galerkin)->ArgsProduct({{1000, 10000}, {1, 3}})->Unit(benchmark::kMillisecond);

void BM_FundamentalField(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Ensemble e(cloud(n, 2, 3));
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = e.particles()(static_cast<Eigen::Index>(i), 0);
  for (auto _ : state) {
    const auto s = solve_fundamental_mc(e, m);
    std::array<double, 2> k{};
    for (std::size_t i = 0; i < n; ++i) s.field->value(row_span(e.particles(), static_cast<Eigen::Index>(i)), k);
    benchmark::DoNotOptimize(k);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FundamentalField)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond)->Complexity(benchmark::oNSquared);

}  // namespace
