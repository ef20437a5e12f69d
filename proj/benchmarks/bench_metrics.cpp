#include <benchmark/benchmark.h>

#include <random>

#include "ragbias/metrics.hpp"

namespace {

using namespace ragbias;

metrics::PredictionSet synthetic_predictions(std::size_t n) {
  std::mt19937_64 rng(11);
  metrics::PredictionSet ps;
  for (std::size_t i = 0; i < n; ++i) {
    ps.ambiguous.push_back(
        {"q" + std::to_string(i),
         static_cast<metrics::Outcome>(rng() % 4)});
    ps.disambiguated.push_back(
        {"q" + std::to_string(i),
         (i % 2) ? bbq::ContextPolarity::Stereotyped
                 : bbq::ContextPolarity::CounterStereotyped,
         static_cast<metrics::Outcome>(rng() % 4)});
  }
  return ps;
}

void BM_BootstrapCi(benchmark::State& state) {
  const auto ps = synthetic_predictions(static_cast<std::size_t>(state.range(0)));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::bootstrap_ci(
        ps, metrics::MetricTag::DiffBiasA, 1000, 0.95, seed++));
  }
}
BENCHMARK(BM_BootstrapCi)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_MetricTally(benchmark::State& state) {
  const auto ps = synthetic_predictions(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::diff_bias_ambiguous(ps));
    benchmark::DoNotOptimize(metrics::diff_bias_disambiguated(ps));
  }
}
BENCHMARK(BM_MetricTally)->Arg(500)->Arg(5000);

}  // namespace
