#include "flowfilter/filters.hpp"

#include <benchmark/benchmark.h>

using namespace flowfilter;

namespace {

ParticleMatrix cloud(std::size_t n, std::uint64_t seed) {
  ParticleMatrix x(static_cast<Eigen::Index>(n), 1);
  std::array<double, 1> z{};
  for (std::size_t i = 0; i < n; ++i) {
    standard_normals(seed, Stream::test, i, 0, z);
    x(static_cast<Eigen::Index>(i), 0) = z[0];
  }
  return x;
}

// One fine step of each filter kind with the gain a 1D model would use.
void BM_FilterStep(benchmark::State& state) {
  const auto kind = static_cast<FilterKind>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const bool linear = state.range(2) != 0;
  const auto model = linear ? make_linear_gaussian(Matrix::Constant(1, 1, -0.5), RowVector::Ones(1))
                            : make_tanh_model(1.0);
  GainOptions g;
  g.method = linear ? GainMethod::exact_gaussian : GainMethod::integral_1d;
  const FilterSpec spec = make_filter_spec(kind, g);
  const GaussianIncrements noise(7, Stream::particles);
  FilterState s(Ensemble(cloud(n, 1)), spec);
  for (auto _ : state) step_filter(s, model, 0.001 * 0.3, 0.001, noise);
  state.SetLabel(spec.name() + (linear ? " (linear-Gaussian)" : " (tanh)"));
}
constexpr long kEnkbf = static_cast<long>(FilterKind::enkbf);
constexpr long kDeltaFpf = static_cast<long>(FilterKind::delta_fpf);
constexpr long kCrisan = static_cast<long>(FilterKind::crisan_xiong);
// The EnKBF only runs on linear-Gaussian models.
BENCHMARK(BM_FilterStep)
    ->Args({kEnkbf, 10000, 1})
    ->Args({kDeltaFpf, 10000, 1})
    ->Args({kDeltaFpf, 10000, 0})
    ->Args({kCrisan, 10000, 0})
    ->Unit(benchmark::kMillisecond);

void BM_Moments(benchmark::State& state) {
  const Ensemble e(cloud(static_cast<std::size_t>(state.range(0)), 2));
  const auto model = make_tanh_model(1.0);
  for (auto _ : state) benchmark::DoNotOptimize(compute_moments(e, model));
}
BENCHMARK(BM_Moments)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);

}  // namespace
