// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "cds/pipeline.hpp"
#include "cds/reconditionor.hpp"
#include "cds/theory.hpp"
#include "synthetic.hpp"

namespace {

struct SolidFixture {
  std::shared_ptr<const cds::TimeSeries> series;
  std::unique_ptr<cds::WindowBank> bank;
  std::optional<cds::Forecaster> model;
  cds::SolidParams params;
  std::size_t begin = 0;

  SolidFixture() {
    series = std::make_shared<const cds::TimeSeries>(synthetic::phase_shifted(6000, 7, 24, 0.8, 5));
    bank = std::make_unique<cds::WindowBank>(series, 96, 24);
    model = cds::LinearForecaster::fit(series->slice(0, 3600), 96, 24).model();
    params.period = 24;
    params.lambda_t = 1000;
    params.lambda_n = 10;
    params.lr = 0.05;
    begin = bank->lower_bound(4800);
  }
};

const SolidFixture& solid_fixture() {
  static const SolidFixture f;
  return f;
}

void BM_SolidParallel(benchmark::State& state) {
  const auto& f = solid_fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(cds::run_solid(*f.model, *f.bank, f.begin, f.bank->size(), f.params));
  }
}

void BM_SolidSerial(benchmark::State& state) {
  const auto& f = solid_fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        cds::run_solid_serial(*f.model, *f.bank, f.begin, f.bank->size(), f.params));
  }
}

void BM_GridSearchClosedForm(benchmark::State& state) {
  const auto& f = solid_fixture();
  const auto grid = cds::SolidGrid::preset("etth1");
  const auto end = f.begin + 200;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        cds::grid_search(*f.model, *f.bank, f.begin, end, grid, 0.005, f.params, {}));
  }
}

void BM_GridSearchExplicit(benchmark::State& state) {
  const auto& f = solid_fixture();
  const auto grid = cds::SolidGrid::preset("etth1");
  const auto end = f.begin + 200;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        cds::grid_search_reference(*f.model, *f.bank, f.begin, end, grid, 0.005, f.params, {}));
  }
}

void BM_ResidualPopulation(benchmark::State& state) {
  const auto& f = solid_fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(cds::residual_population(*f.model, *f.bank, 0, f.begin));
  }
}

const cds::theory::FixedDesignProblem& theory_problem() {
  static const auto p = cds::theory::FixedDesignProblem::random(3, 4, 50, 0.5, 1.0, 2024);
  return p;
}

void BM_MonteCarloParallel(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(cds::theory::monte_carlo_excess_risk(
        theory_problem(), cds::theory::Estimator::kGlr, 10000, 1));
  }
}

void BM_MonteCarloSerial(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(cds::theory::monte_carlo_excess_risk_serial(
        theory_problem(), cds::theory::Estimator::kGlr, 10000, 1));
  }
}

}  // namespace

BENCHMARK(BM_SolidParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolidSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchClosedForm)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchExplicit)->Unit(benchmark::kMillisecond)->Iterations(1);
BENCHMARK(BM_ResidualPopulation)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
