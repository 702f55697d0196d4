#include <benchmark/benchmark.h>

#include "salref/rng.hpp"
#include "salref/saliency.hpp"
#include "salref/tinynet.hpp"

using namespace salref;

namespace {

VolumeStack make_stack(int extent, int channels, std::uint64_t seed) {
  VolumeStack s({extent, extent, extent}, channels);
  Rng rng(seed);
  for (double& v : s.data) v = rng.normal(0.0, 1.0);
  return s;
}

LesionInstance make_lesion(int extent, int radius) {
  LesionInstance li;
  li.id = 1;
  const int c = extent / 2;
  for (int z = c - radius; z <= c + radius; ++z) {
    for (int y = c - radius; y <= c + radius; ++y) {
      for (int x = c - radius; x <= c + radius; ++x) {
        li.voxels.push_back({x, y, z});
      }
    }
  }
  li.cardinality = li.voxels.size();
  return li;
}

}  // namespace

static void BM_InstanceSaliency(benchmark::State& state) {
  const TinyNet net(init_tinynet(2, 3));
  const VolumeStack in = make_stack(16, 2, 11);
  const LesionInstance lesion = make_lesion(16, 1);
  SaliencyConfig cfg;
  cfg.n_samples = static_cast<int>(state.range(0));
  cfg.noise_sigma = 0.05;
  cfg.seed = 42;
  for (auto _ : state) {
    benchmark::DoNotOptimize(instance_saliency(net, in, lesion, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InstanceSaliency)->Arg(1)->Arg(8)->Arg(25);

static void BM_InputGradient(benchmark::State& state) {
  const TinyNet net(init_tinynet(2, 5));
  const VolumeStack in = make_stack(24, 2, 13);
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.input_gradient(in, {12, 12, 12}, 0));
  }
}
BENCHMARK(BM_InputGradient);
