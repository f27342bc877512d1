// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "hsd/ann.hpp"
#include "hsd/conversion.hpp"
#include "hsd/events.hpp"
#include "hsd/ops.hpp"
#include "hsd/rng.hpp"
#include "hsd/snn.hpp"

namespace {

hsd::Tensor random_tensor(std::vector<std::int64_t> shape, hsd::Rng& rng) {
  hsd::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_IntegrateFrames(benchmark::State& state) {
  const hsd::EventStream stream = hsd::generate_synthetic(0, 7, 32, 32, 2000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hsd::integrate_frames(stream, state.range(0)));
  }
}
BENCHMARK(BM_IntegrateFrames)->Arg(5)->Arg(10);

void BM_Conv2dForward(benchmark::State& state) {
  hsd::Rng rng(1);
  const hsd::Tensor x = random_tensor({state.range(0), 2, 32, 32}, rng);
  const hsd::Tensor w = random_tensor({16, 2, 3, 3}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hsd::ops::conv2d(x, w, 1));
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(32);

void BM_Conv2dTrainStep(benchmark::State& state) {
  hsd::Rng rng(2);
  const hsd::Tensor x = random_tensor({state.range(0), 2, 32, 32}, rng);
  hsd::Tensor w = random_tensor({16, 2, 3, 3}, rng);
  w.set_requires_grad(true);
  for (auto _ : state) {
    hsd::Tape tape;
    {
      hsd::Tape::Scope scope(tape);
      tape.backward(hsd::ops::sum_all(hsd::ops::conv2d(x, w, 1)));
    }
    w.zero_grad();
  }
}
BENCHMARK(BM_Conv2dTrainStep)->Arg(32);

void BM_QcfsForward(benchmark::State& state) {
  hsd::Rng rng(3);
  const hsd::Tensor z = random_tensor({state.range(0)}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hsd::qcfs_forward(z, 16, 1.0));
  }
}
BENCHMARK(BM_QcfsForward)->Arg(1 << 14);

void BM_IfStep(benchmark::State& state) {
  hsd::Rng rng(4);
  hsd::IfLayerState membrane{hsd::Tensor::full({state.range(0)}, 0.5), 1.0};
  const hsd::Tensor drive = random_tensor({state.range(0)}, rng);
  for (auto _ : state) {
    hsd::IfStepResult step = hsd::if_step(membrane, drive);
    benchmark::DoNotOptimize(step.spikes.values().data());
    membrane = std::move(step.state);
  }
}
BENCHMARK(BM_IfStep)->Arg(1 << 14);

void BM_SnnStep(benchmark::State& state) {
  const hsd::ModelSpec spec = hsd::tiny_net(32, 32, 4, 16);
  const hsd::SnnModel snn = hsd::convert(hsd::AnnModel::create(spec, 5, 2.0));
  hsd::Rng rng(6);
  const hsd::Tensor frame = random_tensor({state.range(0), 2, 32, 32}, rng);
  auto states = snn.initial_state(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(snn.step(frame, states, nullptr));
  }
}
BENCHMARK(BM_SnnStep)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
