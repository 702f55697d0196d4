#pragma once

#include <functional>
#include <vector>

#include "salref/volume.hpp"

namespace salref {

// Differentiable voxel-probability scorer. forward maps a C-channel stack to
// a probability volume over the same grid; input_gradient is the exact
// reverse-mode derivative of one output voxel's score w.r.t. one input
// channel. Implementations must be pure so they can be shared read-only
// across workers.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual int input_channels() const = 0;

  virtual Volume3D forward(const VolumeStack& input) const = 0;

  virtual Volume3D input_gradient(const VolumeStack& input, Coord v_out,
                                  int channel) const = 0;

  // Gradients for many output voxels over one input. The sink receives the
  // gradient volume plus the inclusive bounds of its support window; the
  // volume buffer may be reused between calls. Default loops input_gradient.
  using GradientSink =
      std::function<void(std::size_t index, const Volume3D& grad, Coord lo, Coord hi)>;
  virtual void instance_gradients(const VolumeStack& input,
                                  const std::vector<Coord>& v_outs, int channel,
                                  const GradientSink& sink) const;
};

}  // namespace salref
