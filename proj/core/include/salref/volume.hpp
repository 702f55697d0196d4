#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "salref/errors.hpp"

namespace salref {

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  bool operator==(const Dims&) const = default;
  bool contains(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
  }
};

struct Coord {
  int x = 0, y = 0, z = 0;
  bool operator==(const Coord&) const = default;
};

// Dense 3D scalar field, x-fastest order, 64-bit floats internally.
struct Volume3D {
  Dims dims;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<double> data;
  std::string channel;

  Volume3D() = default;
  Volume3D(Dims d, double fill = 0.0, std::string chan = {})
      : dims(d), data(d.count(), fill), channel(std::move(chan)) {}

  double& at(int x, int y, int z) { return data[dims.index(x, y, z)]; }
  double at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }

  void validate() const;
};

struct BinaryMask {
  Dims dims;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  explicit BinaryMask(Dims d, bool fill = false)
      : dims(d), bits(d.count(), fill ? 1 : 0) {}

  bool get(int x, int y, int z) const { return bits[dims.index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) {
    bits[dims.index(x, y, z)] = v ? 1 : 0;
  }
  std::size_t count_true() const;
};

// Non-negative integer labels, 0 = background.
struct LabelMap {
  Dims dims;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  explicit LabelMap(Dims d) : dims(d), labels(d.count(), 0) {}

  std::int32_t get(int x, int y, int z) const {
    return labels[dims.index(x, y, z)];
  }
  std::int32_t max_label() const;
};

// C-channel stack sharing one spatial grid; channel-major storage.
struct VolumeStack {
  Dims dims;
  int channels = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<double> data;

  VolumeStack() = default;
  VolumeStack(Dims d, int c)
      : dims(d), channels(c), data(d.count() * c, 0.0) {}

  double* channel_data(int c) { return data.data() + c * dims.count(); }
  const double* channel_data(int c) const {
    return data.data() + c * dims.count();
  }
  double at(int c, int x, int y, int z) const {
    return channel_data(c)[dims.index(x, y, z)];
  }
  double& at(int c, int x, int y, int z) {
    return channel_data(c)[dims.index(x, y, z)];
  }
  Volume3D extract_channel(int c) const;
  void set_channel(int c, const Volume3D& v);
};

// Z-score standardization with population std. When a mask is given the
// statistics come from masked voxels only; the same affine map is applied
// everywhere. Throws DegenerateInputError on constant statistics regions.
Volume3D zscore(const Volume3D& vol,
                const BinaryMask* mask = nullptr);

}  // namespace salref
