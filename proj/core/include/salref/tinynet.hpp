#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "salref/scorer.hpp"
#include "salref/volume.hpp"

namespace salref {

// Fixed architecture: conv3d(k=3, C_in->8) + ReLU, conv3d(k=3, 8->8) + ReLU,
// conv3d(k=1, 8->1) + sigmoid. Zero padding preserves dims; the receptive
// field of one output voxel is 5x5x5.
struct TinyNetParams {
  static constexpr int kHidden = 8;
  static constexpr int kKernel = 3;
  static constexpr int kReceptiveRadius = 2;

  int c_in = 0;
  std::vector<double> w1;  // [8][c_in][3][3][3]
  std::vector<double> b1;  // [8]
  std::vector<double> w2;  // [8][8][3][3][3]
  std::vector<double> b2;  // [8]
  std::vector<double> w3;  // [8]  (k=1 conv, 8->1)
  double b3 = 0.0;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
  void validate() const;
};

// Uniform [-a, a] with a = sqrt(1/fan_in); biases start at zero.
TinyNetParams init_tinynet(int c_in, std::uint64_t seed);

class TinyNet : public Scorer {
 public:
  // Gradients differentiate the sigmoid output by default; the logit is
  // available behind this switch.
  enum class GradTarget { kSigmoid, kLogit };

  explicit TinyNet(TinyNetParams params,
                   GradTarget target = GradTarget::kSigmoid);

  int input_channels() const override { return params_.c_in; }
  Volume3D forward(const VolumeStack& input) const override;
  Volume3D input_gradient(const VolumeStack& input, Coord v_out,
                          int channel) const override;
  void instance_gradients(const VolumeStack& input,
                          const std::vector<Coord>& v_outs, int channel,
                          const GradientSink& sink) const override;

  const TinyNetParams& params() const { return params_; }

 private:
  TinyNetParams params_;
  GradTarget target_;
};

struct TrainSample {
  VolumeStack input;
  BinaryMask target;
};

struct TrainResult {
  TinyNetParams params;
  std::vector<double> loss_per_epoch;
};

// Full-batch gradient descent on voxel-wise BCE + (1 - soft Dice).
// Deterministic given seed. Throws DivergenceError naming the epoch on NaN loss.
TrainResult train_tiny(const TinyNetParams& params,
                       const std::vector<TrainSample>& dataset, int epochs,
                       double lr = 1e-2, std::uint64_t seed = 0);

double soft_dice(const Volume3D& prob, const BinaryMask& target);

// Versioned binary params file plus a JSON sidecar (<path>.json) with
// architecture metadata.
void save_tinynet(const TinyNetParams& params, const std::filesystem::path& path);
TinyNetParams load_tinynet(const std::filesystem::path& path);

}  // namespace salref
