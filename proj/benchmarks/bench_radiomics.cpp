#include <benchmark/benchmark.h>

#include "salref/radiomics.hpp"
#include "salref/rng.hpp"
#include "salref/saliency.hpp"

using namespace salref;

namespace {

SaliencyMap make_map(int extent, std::uint64_t seed) {
  SaliencyMap m;
  m.map = Volume3D({extent, extent, extent});
  Rng rng(seed);
  for (double& v : m.map.data) v = rng.normal(0.0, 1.0);
  m.lesion_id = 1;
  return m;
}

LesionInstance make_blob(int extent, int radius) {
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

static void BM_ExtractAll(benchmark::State& state) {
  const int radius = static_cast<int>(state.range(0));
  const SaliencyMap map = make_map(32, 7);
  const LesionInstance lesion = make_blob(32, radius);
  ExtractionOptions opts;
  opts.bin_width = 0.25;
  for (auto _ : state) {
    benchmark::DoNotOptimize(extract_all(map, lesion, opts));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ExtractAll)->Arg(2)->Arg(4)->Arg(6);

static void BM_Glcm(benchmark::State& state) {
  const int radius = static_cast<int>(state.range(0));
  const SaliencyMap map = make_map(32, 7);
  const LesionInstance lesion = make_blob(32, radius);
  BinaryMask roi(map.map.dims);
  for (const Coord& v : lesion.voxels) roi.set(v.x, v.y, v.z, true);
  const DiscretizedROI disc = discretize(map.map, roi, 0.25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(glcm_features(disc));
  }
}
BENCHMARK(BM_Glcm)->Arg(4)->Arg(6);

BENCHMARK_MAIN();
