#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "salref/instances.hpp"
#include "salref/scorer.hpp"
#include "salref/volume.hpp"

namespace salref {

struct SaliencyConfig {
  int n_samples = 50;       // noisy replicas N
  double noise_sigma = 0.05;
  int channel = 0;          // input channel gradients are taken w.r.t.
  std::uint64_t seed = 0;

  void validate() const;
};

struct SaliencyMap {
  Volume3D map;  // signed values, channel tag "saliency"
  int lesion_id = 0;
  SaliencyConfig config;
};

// Instance-level SmoothGrad: for each of N replicas, perturb every input
// channel with i.i.d. Gaussian noise of std sigma, compute the input gradient
// of each output voxel in the lesion domain, keep at every input voxel the
// signed value with the largest magnitude across the lesion domain, then
// average the N reduced maps. Ties in magnitude go to the lowest output voxel
// in x-fastest scan order. Deterministic given the seed.
SaliencyMap instance_saliency(const Scorer& scorer, const VolumeStack& input,
                              const LesionInstance& omega,
                              const SaliencyConfig& cfg);

struct BatchEntry {
  int lesion_id = 0;
  std::optional<SaliencyMap> map;  // empty on per-lesion failure
  std::string error;
};

// Per-lesion seeds are derived as seed XOR lesion id, so results depend on
// the lesion, not its position in the list or the worker schedule.
// Individual failures are recorded and the batch continues; if every lesion
// fails the first error is rethrown.
std::vector<BatchEntry> saliency_batch(const Scorer& scorer,
                                       const VolumeStack& input,
                                       const std::vector<LesionInstance>& instances,
                                       const SaliencyConfig& cfg,
                                       int workers = 1);

}  // namespace salref
