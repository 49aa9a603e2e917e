// Serial references against the OpenMP kernels. Argument = worker count.
#include <benchmark/benchmark.h>

#include <random>

#include "spim/commands.hpp"

using namespace spim;

namespace {

RunConfig desk() {
  RunConfig c = desk_preset();
  c.finalize();
  return c;
}

SweepSpec small_sweep(const RunConfig &c) {
  SweepSpec spec;
  spec.kind = SweepKind::snr;
  spec.grid = {10.0};
  spec.trials = 16;
  spec.methods = {Method::spim_mo, Method::mmwave};
  spec.index_bits = c.index_bits;
  return spec;
}

void BM_SweepSerial(benchmark::State &state) {
  const RunConfig c = desk();
  const SweepSpec spec = small_sweep(c);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sweep_serial(spec, c.scenario, c.design));
  }
}

void BM_SweepParallel(benchmark::State &state) {
  const RunConfig c = desk();
  const SweepSpec spec = small_sweep(c);
  DesignOptions opt = c.design;
  opt.workers = int(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sweep(spec, c.scenario, opt));
  }
}

std::vector<ChannelMatrix> desk_channels(const RunConfig &c) {
  Rng rng = make_rng(c.seed, {stream::kChannel, 0});
  return synthesize_all(draw_paths(c.scenario, c.scenario.gains, rng), c.scenario);
}

void BM_BankSerial(benchmark::State &state) {
  const RunConfig c = desk();
  const auto hs = desk_channels(c);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_bank_serial(c.scenario, hs, c.design));
  }
}

void BM_BankParallel(benchmark::State &state) {
  const RunConfig c = desk();
  const auto hs = desk_channels(c);
  DesignOptions opt = c.design;
  opt.workers = int(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_bank(c.scenario, hs, opt));
  }
}

struct GradientFixture {
  Model<float> model;
  std::vector<Sample> samples;
  std::vector<std::size_t> indices;
  DropoutMask mask;

  GradientFixture() {
    const RunConfig c = desk();
    const NetworkArch a = c.network();
    model = init_model<float>(a, 1);
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g(0.0f, 1.0f);
    samples.resize(128);
    for (Sample &s : samples) {
      s.x.resize(std::size_t(a.n_rx) * a.n_tx * a.channels);
      s.y.resize(std::size_t(a.output_dim));
      for (float &v : s.x) {
        v = g(rng);
      }
      for (float &v : s.y) {
        v = g(rng);
      }
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      indices.push_back(i);
    }
    mask = make_mask(a, 1, 0);
  }
};

void BM_GradientSerial(benchmark::State &state) {
  const GradientFixture f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_gradient_serial<float>(f.model, f.samples, f.indices, &f.mask));
  }
}

void BM_GradientParallel(benchmark::State &state) {
  const GradientFixture f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        batch_gradient<float>(f.model, f.samples, f.indices, &f.mask, int(state.range(0))));
  }
}

} // namespace

BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SweepParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BankSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BankParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GradientSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GradientParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
