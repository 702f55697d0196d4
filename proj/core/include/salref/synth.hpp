#pragma once

#include <cstdint>
#include <vector>

#include "salref/volume.hpp"

namespace salref {

struct PhantomSpec {
  Dims dims{32, 32, 32};
  int n_lesions = 5;
  double radius_min = 2.0, radius_max = 3.5;  // voxels
  double lesion_offset = 3.0;     // intensity added on the primary channel
  double secondary_offset = 1.0;  // added on remaining channels
  double noise_std = 1.0;
  int channels = 2;
  // Decoys get a smaller offset so a trained scorer plausibly fires on them
  // while their saliency statistics differ from real lesions.
  double decoy_offset_scale = 0.45;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  VolumeStack stack;
  LabelMap gt;
};

// Background Gaussian noise plus non-overlapping ellipsoids (random axis
// ratios in [0.6, 1.4]) with an intensity offset; gt labels them 1..n in
// placement order. Deterministic per seed. Throws CapacityError when
// rejection sampling (10000 attempts) cannot place a lesion.
Phantom generate_phantom(const PhantomSpec& spec);

// Predictions = every gt lesion shifted by at most one voxel (overlap with
// its origin preserved) plus n_fp decoy ellipsoids with zero gt overlap.
// Decoy intensity is painted into the stack when one is supplied.
// match_lesions(result, gt) yields exactly (n_gt TP, n_fp FP, 0 FN).
LabelMap generate_candidates(const LabelMap& gt, int n_fp,
                             const PhantomSpec& spec, std::uint64_t seed,
                             VolumeStack* stack = nullptr);

}  // namespace salref
