// Copyright 2026 The GridDrive Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "griddrive/codec.hpp"
#include "griddrive/flow.hpp"
#include "griddrive/mot.hpp"
#include "griddrive/seqpack.hpp"
#include "griddrive/world.hpp"

using namespace griddrive;

namespace {

world::Episode bench_episode() {
  static const world::Episode ep = world::generate_episode(42, world::InstructionClass::TurnLeft);
  return ep;
}

codec::ActionStats bench_stats() {
  codec::ActionStats stats;
  stats.mean = {0.5, 0.0, 0.0};
  stats.stdev = {0.4, 0.05, 0.1};
  return stats;
}

template <typename S>
seq::PackedSample<S> desk_sample() {
  const codec::Vocabulary vocab = codec::Vocabulary::build_default();
  seq::SampleSpec spec;
  spec.t0 = 3;
  spec.task = seq::Task::JointTraining;
  Rng rng(7);
  auto sample = seq::pack_sample<S>(bench_episode(), spec, vocab, bench_stats(), &rng);
  flow::noisify_sample(sample, rng);
  return sample;
}

template <typename S>
model::MoTWeights<S> desk_weights() {
  model::MoTConfig cfg;
  cfg.vocab_size = codec::Vocabulary::build_default().size();
  model::MoTWeights<S> w;
  w.allocate(cfg);
  Rng rng(9);
  w.init(rng);
  return w;
}

}  // namespace

static void BM_Render(benchmark::State& state) {
  const world::Episode ep = bench_episode();
  for (auto _ : state) {
    benchmark::DoNotOptimize(world::render(ep.poses[3], ep.map));
  }
}
BENCHMARK(BM_Render);

static void BM_GenerateEpisode(benchmark::State& state) {
  uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(world::generate_episode(seed++, world::InstructionClass::Stop));
  }
}
BENCHMARK(BM_GenerateEpisode);

static void BM_BuildMask(benchmark::State& state) {
  Rng rng(3);
  const seq::BlockLayout layout = seq::random_layout(rng, static_cast<int>(state.range(0)), 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(seq::build_mask(layout));
  }
  state.SetComplexityN(layout.total_tokens());
}
BENCHMARK(BM_BuildMask)->Arg(4)->Arg(8)->Arg(12);

static void BM_PackSample(benchmark::State& state) {
  const codec::Vocabulary vocab = codec::Vocabulary::build_default();
  const codec::ActionStats stats = bench_stats();
  seq::SampleSpec spec;
  spec.t0 = 3;
  spec.task = seq::Task::JointTraining;
  Rng rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        seq::pack_sample<float>(bench_episode(), spec, vocab, stats, &rng));
  }
}
BENCHMARK(BM_PackSample);

static void BM_MotForward_f32(benchmark::State& state) {
  const auto w = desk_weights<float>();
  const auto sample = desk_sample<float>();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        mot_forward(sample, w, static_cast<model::MoTCache<float>*>(nullptr)));
  }
  state.SetItemsProcessed(state.iterations() * sample.packed.length);
}
BENCHMARK(BM_MotForward_f32);

static void BM_MotForwardBackward_f32(benchmark::State& state) {
  const auto w = desk_weights<float>();
  const auto sample = desk_sample<float>();
  model::MoTWeights<float> grads;
  grads.allocate(w.config);
  model::TransposedWeights<float> tw;
  tw.build(w);
  for (auto _ : state) {
    model::MoTCache<float> cache;
    const auto out = mot_forward(sample, w, &cache);
    std::vector<Matrix<float>> d_eps(sample.layout.blocks.size());
    for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
      if (!sample.layout.blocks[bi].supervised) continue;
      d_eps[bi] = Matrix<float>(out.eps_hat[bi].rows, out.eps_hat[bi].cols);
      for (auto& v : d_eps[bi].v) v = 1e-3f;
    }
    grads.zero();
    mot_backward(sample, w, cache, d_eps, grads, &tw);
    benchmark::DoNotOptimize(grads.tok_embed.v[0]);
  }
  state.SetItemsProcessed(state.iterations() * sample.packed.length);
}
BENCHMARK(BM_MotForwardBackward_f32);

static void BM_SampleActions_f32(benchmark::State& state) {
  const auto w = desk_weights<float>();
  const codec::Vocabulary vocab = codec::Vocabulary::build_default();
  const codec::ActionStats stats = bench_stats();
  flow::Sampler<float> sampler;
  sampler.weights = &w;
  sampler.vocab = &vocab;
  sampler.stats = &stats;
  sampler.jobs = 1;
  flow::GuidanceConfig g;
  g.steps = static_cast<int>(state.range(0));
  const world::Episode ep = bench_episode();
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow::sample_actions(sampler, ep, 3, g, Rng(1)));
  }
}
BENCHMARK(BM_SampleActions_f32)->Arg(5)->Arg(20);

BENCHMARK_MAIN();
