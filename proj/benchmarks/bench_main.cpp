#include <benchmark/benchmark.h>

#include "varsurv/datagen.hpp"
#include "varsurv/joint.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/naive.hpp"
#include "varsurv/survival.hpp"

using namespace varsurv;

namespace {

SimulatedData dataset(int n, int measurements = 4) {
  SimConfig cfg;
  cfg.n_individuals = n;
  cfg.n_measurements = measurements;
  cfg.seed = 99;
  return generate_dataset(cfg);
}

}  // namespace

static void BM_GenerateDataset(benchmark::State& state) {
  SimConfig cfg;
  cfg.n_individuals = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(generate_dataset(cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateDataset)->Arg(1500)->Arg(10000);

static void BM_NaiveTable(benchmark::State& state) {
  const auto d = dataset(static_cast<int>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(naive_table(d.longitudinal));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NaiveTable)->Arg(1500)->Arg(10000);

static void BM_TwoStageCox(benchmark::State& state) {
  const auto d = dataset(static_cast<int>(state.range(0)));
  const auto stage1 = to_stage1(naive_table(d.longitudinal));
  for (auto _ : state) benchmark::DoNotOptimize(two_stage_fit(stage1, d.survival));
}
BENCHMARK(BM_TwoStageCox)->Arg(1500)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_CumulativeHazard(benchmark::State& state) {
  const auto d = dataset(1500);
  std::vector<double> events;
  for (const auto& r : d.survival.rows)
    if (r.event) events.push_back(r.followup_time);
  const PiecewiseHazard ph{quantile_cutpoints(events, 15, 20.0), std::vector<double>(15, 0.01)};
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cumulative_hazard(ph, t, 0.3));
    t = t < 20.0 ? t + 0.013 : 0.0;
  }
}
BENCHMARK(BM_CumulativeHazard);

// one retained draw per iteration: cost of a full Gibbs sweep
static void BM_LmmSweep(benchmark::State& state) {
  const auto d = dataset(static_cast<int>(state.range(0)));
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  McmcSettings s;
  s.n_chains = 1;
  s.burn_in = 0;
  s.n_samples = 100;
  for (auto _ : state) benchmark::DoNotOptimize(fit_lmm(c, {LmmVariant::LMM2, {}}, {}, s));
  state.SetItemsProcessed(state.iterations() * s.n_samples);
}
BENCHMARK(BM_LmmSweep)->Arg(1500)->Unit(benchmark::kMillisecond);

static void BM_JointSweep(benchmark::State& state) {
  const auto d = dataset(static_cast<int>(state.range(0)));
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  McmcSettings s;
  s.n_chains = 1;
  s.burn_in = 0;
  s.n_samples = 100;
  for (auto _ : state) benchmark::DoNotOptimize(fit_joint(c, {{LmmVariant::LMM2, {}}, 15}, {}, s));
  state.SetItemsProcessed(state.iterations() * s.n_samples);
}
BENCHMARK(BM_JointSweep)->Arg(1500)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
