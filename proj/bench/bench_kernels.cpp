#include <benchmark/benchmark.h>

#include "elastic_dml/dml.hpp"
#include "elastic_dml/econ.hpp"
#include "elastic_dml/nnet.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

const Panel& default_panel() {
  static const Panel panel = simulate_policy(SimConfig{}, Exec::serial);
  return panel;
}

void BM_Simulate(benchmark::State& state) {
  const SimConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_policy(config, exec_of(state)));
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}
BENCHMARK(BM_Simulate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  nnet::NetworkSpec spec;
  spec.input_dim = 114;
  spec.output_dim = 5;
  spec.seed = 3;
  const nnet::Network net(spec);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(114, 20000);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(x, exec_of(state)));
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}
BENCHMARK(BM_Predict)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TwfeFit(benchmark::State& state) {
  const auto data = econ::twfe_data(default_panel(), 0, 100);
  for (auto _ : state) benchmark::DoNotOptimize(econ::twfe_poisson_fit(data, {}, exec_of(state)));
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}
BENCHMARK(BM_TwfeFit)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TwfeByCategory(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(econ::twfe_fit_by_category(default_panel(), 0, 100, {}, exec_of(state)));
  }
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}
BENCHMARK(BM_TwfeByCategory)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
