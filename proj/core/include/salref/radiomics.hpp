#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "salref/instances.hpp"
#include "salref/saliency.hpp"
#include "salref/volume.hpp"

namespace salref {

// 93 intensity/texture features (shape families excluded): first-order (18),
// GLCM (24), GLRLM (16), GLSZM (16), GLDM (14), NGTDM (5). Definitions and
// degenerate-case conventions are documented per family in the implementation.
inline constexpr int kFeatureCount = 93;
const std::array<std::string, kFeatureCount>& feature_names();

// Fixed-bin-width discretization anchored at the ROI minimum:
// level(v) = floor((x(v) - min)/W) + 1, clamped to N_g at the right edge.
struct DiscretizedROI {
  Dims dims;
  std::vector<int> levels;  // 0 outside ROI, 1..n_levels inside
  std::vector<std::size_t> roi_indices;  // x-fastest order
  int n_levels = 0;
  double bin_width = 0.0;
  double roi_min = 0.0;

  int level_at(std::size_t idx) const { return levels[idx]; }
};

DiscretizedROI discretize(const Volume3D& map, const BinaryMask& roi,
                          double bin_width);

struct NamedFeatures {
  std::vector<std::string> names;
  std::vector<double> values;
};

NamedFeatures first_order(const Volume3D& map, const BinaryMask& roi,
                          double bin_width);
NamedFeatures glcm_features(const DiscretizedROI& disc);
NamedFeatures glrlm_features(const DiscretizedROI& disc);
NamedFeatures glszm_features(const DiscretizedROI& disc);
NamedFeatures gldm_features(const DiscretizedROI& disc);
NamedFeatures ngtdm_features(const DiscretizedROI& disc);

// The 13 unique 3D direction offsets at Chebyshev distance 1.
const std::vector<Coord>& texture_directions();

struct FeatureVector {
  std::array<double, kFeatureCount> values{};
  int lesion_id = 0;
  std::string group;    // "TP", "FP" or empty when unknown
  std::string patient;
  bool complete = true;
  std::string exclusion_reason;
};

struct ExtractionOptions {
  int dilation_radius = 1;
  Structuring dilation_structuring = Structuring::k26;
  double bin_width = 10.0;
  // The map is z-scored over the whole volume before extraction.
  bool standardize_map = true;
  // Warn threshold: fewer ROI gray levels than this suggests the bin width
  // is too coarse for the map's dynamic range.
  int min_levels_warning = 8;
};

struct ExtractionOutcome {
  FeatureVector vector;
  int n_levels = 0;
  bool low_level_warning = false;
};

ExtractionOutcome extract_all(const SaliencyMap& saliency,
                              const LesionInstance& lesion,
                              const ExtractionOptions& opts = {});

// CSV with header `patient,lesion_id,group,<93 names>`, 17 significant digits.
std::string features_csv(const std::vector<FeatureVector>& rows);
std::vector<FeatureVector> parse_features_csv(const std::string& text);

}  // namespace salref
