#pragma once

#include <utility>
#include <vector>

#include "salref/volume.hpp"

namespace salref {

// One connected component of a binary mask.
struct LesionInstance {
  int id = 0;
  std::vector<Coord> voxels;  // x-fastest scan order
  std::size_t cardinality = 0;
  Coord bbox_min, bbox_max;  // inclusive

  BinaryMask to_mask(const Dims& dims) const;
};

// TP/FP/FN grouping of predicted vs ground-truth instances.
// A prediction is TP iff it shares at least one voxel with any gt instance;
// a gt instance is FN iff no prediction touches it.
struct MatchResult {
  std::vector<std::pair<int, std::vector<int>>> tp;  // pred id -> gt ids hit
  std::vector<int> fp;                               // pred ids
  std::vector<int> fn;                               // gt ids
  int n_tp = 0, n_fp = 0, n_fn = 0;

  bool is_tp(int pred_id) const;
};

// Labels assigned in first-encountered order of an x-fastest scan, ids 1..K.
std::pair<LabelMap, std::vector<LesionInstance>> connected_components(
    const BinaryMask& mask, int connectivity = 26);

std::vector<LesionInstance> instances_from_labels(const LabelMap& labels);

MatchResult match_lesions(const LabelMap& pred, const LabelMap& gt);

enum class Structuring { k6, k26 };

// Morphological dilation, clipped at the volume boundary. Radius r equals
// r successive radius-1 passes.
BinaryMask dilate(const BinaryMask& mask, int radius,
                  Structuring structuring = Structuring::k26);

}  // namespace salref
