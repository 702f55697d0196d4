#include "salref/volume.hpp"

#include <cmath>
#include <numeric>

namespace salref {

void Volume3D::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw ValidationError("volume dims must be positive");
  }
  if (data.size() != dims.count()) {
    throw ValidationError("volume data length does not match dims");
  }
  for (double s : spacing) {
    if (!(s > 0.0)) throw ValidationError("voxel spacing must be positive");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw ValidationError("volume contains non-finite values");
  }
}

std::size_t BinaryMask::count_true() const {
  std::size_t n = 0;
  for (auto b : bits) n += (b != 0);
  return n;
}

std::int32_t LabelMap::max_label() const {
  std::int32_t m = 0;
  for (auto l : labels) {
    if (l > m) m = l;
  }
  return m;
}

Volume3D VolumeStack::extract_channel(int c) const {
  Volume3D out(dims);
  out.spacing = spacing;
  const double* src = channel_data(c);
  std::copy(src, src + dims.count(), out.data.begin());
  return out;
}

void VolumeStack::set_channel(int c, const Volume3D& v) {
  if (!(v.dims == dims)) throw ValidationError("channel dims mismatch");
  std::copy(v.data.begin(), v.data.end(), channel_data(c));
}

Volume3D zscore(const Volume3D& vol, const BinaryMask* mask) {
  vol.validate();
  if (mask && !(mask->dims == vol.dims)) {
    throw ValidationError("zscore: mask dims mismatch");
  }

  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (mask && mask->bits[i] == 0) continue;
    sum += vol.data[i];
    ++n;
  }
  if (n == 0) throw ValidationError("zscore: empty statistics region");
  const double mean = sum / static_cast<double>(n);

  double ss = 0.0;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (mask && mask->bits[i] == 0) continue;
    const double d = vol.data[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));  // population std
  if (sd == 0.0) {
    throw DegenerateInputError("zscore: constant statistics region");
  }

  Volume3D out = vol;
  for (double& v : out.data) v = (v - mean) / sd;
  return out;
}

}  // namespace salref
