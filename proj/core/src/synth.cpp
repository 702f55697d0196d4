#include "salref/synth.hpp"

#include <cmath>

#include "salref/rng.hpp"

namespace salref {

void PhantomSpec::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw ValidationError("phantom: dims must be positive");
  }
  if (n_lesions < 0) throw ValidationError("phantom: n_lesions must be >= 0");
  if (!(radius_min > 0.0) || radius_max < radius_min) {
    throw ValidationError("phantom: bad radius range");
  }
  if (channels < 1) throw ValidationError("phantom: channels must be >= 1");
  if (noise_std < 0.0) throw ValidationError("phantom: noise_std must be >= 0");
}

namespace {

constexpr int kMaxAttempts = 10000;

struct Ellipsoid {
  double cx, cy, cz;
  double rx, ry, rz;

  bool contains(int x, int y, int z) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (z - cz) / rz;
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

std::vector<Coord> ellipsoid_voxels(const Ellipsoid& e, const Dims& dims) {
  std::vector<Coord> out;
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(dims.nx - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(dims.ny - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  const int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.rz)));
  const int z1 = std::min(dims.nz - 1, static_cast<int>(std::ceil(e.cz + e.rz)));
  for (int z = z0; z <= z1; ++z) {
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (e.contains(x, y, z)) out.push_back({x, y, z});
      }
    }
  }
  return out;
}

Ellipsoid random_ellipsoid(Rng& rng, const PhantomSpec& spec) {
  const double r = spec.radius_min +
                   rng.uniform() * (spec.radius_max - spec.radius_min);
  auto ratio = [&]() { return 0.6 + rng.uniform() * 0.8; };  // [0.6, 1.4]
  Ellipsoid e;
  e.rx = r * ratio();
  e.ry = r * ratio();
  e.rz = r * ratio();
  // Fully inside the volume. Forbidden margin accounts for the axis radius.
  auto center = [&](int extent, double radius) {
    const double lo = radius + 1.0, hi = extent - 2.0 - radius;
    if (hi < lo) throw CapacityError("phantom: volume too small for lesion radius");
    return lo + rng.uniform() * (hi - lo);
  };
  e.cx = center(spec.dims.nx, e.rx);
  e.cy = center(spec.dims.ny, e.ry);
  e.cz = center(spec.dims.nz, e.rz);
  return e;
}

// Rejection-sample an ellipsoid whose voxels avoid `occupied`.
std::vector<Coord> place_blob(Rng& rng, const PhantomSpec& spec,
                              const std::vector<char>& occupied, int placed) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const Ellipsoid e = random_ellipsoid(rng, spec);
    std::vector<Coord> voxels = ellipsoid_voxels(e, spec.dims);
    if (voxels.empty()) continue;
    bool clash = false;
    for (const Coord& v : voxels) {
      if (occupied[spec.dims.index(v.x, v.y, v.z)]) {
        clash = true;
        break;
      }
    }
    if (!clash) return voxels;
  }
  throw CapacityError("phantom: placement infeasible after " +
                      std::to_string(kMaxAttempts) + " attempts (placed " +
                      std::to_string(placed) + ")");
}

// Occupancy with a one-voxel safety ring so separate blobs never touch under
// 26-connectivity.
void occupy(std::vector<char>& occupied, const Dims& dims,
            const std::vector<Coord>& voxels, int margin) {
  for (const Coord& v : voxels) {
    for (int dz = -margin; dz <= margin; ++dz) {
      for (int dy = -margin; dy <= margin; ++dy) {
        for (int dx = -margin; dx <= margin; ++dx) {
          const int x = v.x + dx, y = v.y + dy, z = v.z + dz;
          if (dims.contains(x, y, z)) occupied[dims.index(x, y, z)] = 1;
        }
      }
    }
  }
}

void paint(VolumeStack& stack, const std::vector<Coord>& voxels,
           double primary, double secondary) {
  for (const Coord& v : voxels) {
    stack.at(0, v.x, v.y, v.z) += primary;
    for (int c = 1; c < stack.channels; ++c) {
      stack.at(c, v.x, v.y, v.z) += secondary;
    }
  }
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  Phantom ph;
  ph.stack = VolumeStack(spec.dims, spec.channels);
  ph.gt = LabelMap(spec.dims);
  for (double& v : ph.stack.data) v = rng.normal(0.0, spec.noise_std);

  std::vector<char> occupied(spec.dims.count(), 0);
  for (int i = 0; i < spec.n_lesions; ++i) {
    const std::vector<Coord> voxels = place_blob(rng, spec, occupied, i);
    occupy(occupied, spec.dims, voxels, 2);
    paint(ph.stack, voxels, spec.lesion_offset, spec.secondary_offset);
    for (const Coord& v : voxels) {
      ph.gt.labels[spec.dims.index(v.x, v.y, v.z)] = i + 1;
    }
  }
  return ph;
}

LabelMap generate_candidates(const LabelMap& gt, int n_fp,
                             const PhantomSpec& spec, std::uint64_t seed,
                             VolumeStack* stack) {
  spec.validate();
  if (!(gt.dims == spec.dims)) {
    throw ValidationError("generate_candidates: gt dims do not match spec");
  }
  if (stack && !(stack->dims == spec.dims)) {
    throw ValidationError("generate_candidates: stack dims do not match spec");
  }
  Rng rng(seed);
  const Dims& dims = gt.dims;

  LabelMap pred(dims);
  // gt lesions, jittered by at most one voxel while preserving overlap.
  const std::int32_t n_gt = gt.max_label();
  for (std::int32_t id = 1; id <= n_gt; ++id) {
    std::vector<Coord> voxels;
    for (int z = 0; z < dims.nz; ++z) {
      for (int y = 0; y < dims.ny; ++y) {
        for (int x = 0; x < dims.nx; ++x) {
          if (gt.get(x, y, z) == id) voxels.push_back({x, y, z});
        }
      }
    }
    if (voxels.empty()) continue;
    for (int attempt = 0;; ++attempt) {
      const int jx = static_cast<int>(rng.uniform_int(-1, 1));
      const int jy = static_cast<int>(rng.uniform_int(-1, 1));
      const int jz = static_cast<int>(rng.uniform_int(-1, 1));
      bool inside = true, overlaps = false;
      for (const Coord& v : voxels) {
        const int x = v.x + jx, y = v.y + jy, z = v.z + jz;
        if (!dims.contains(x, y, z)) {
          inside = false;
          break;
        }
        if (gt.get(x, y, z) == id) overlaps = true;
      }
      if (inside && overlaps) {
        for (const Coord& v : voxels) {
          pred.labels[dims.index(v.x + jx, v.y + jy, v.z + jz)] = id;
        }
        break;
      }
      if (attempt >= 10) {  // fall back to the unjittered lesion
        for (const Coord& v : voxels) {
          pred.labels[dims.index(v.x, v.y, v.z)] = id;
        }
        break;
      }
    }
  }

  // Decoys: zero overlap with gt and with each other (and with the jittered
  // predictions, so instances stay separable).
  std::vector<char> occupied(dims.count(), 0);
  for (std::size_t i = 0; i < dims.count(); ++i) {
    if (gt.labels[i] != 0 || pred.labels[i] != 0) occupied[i] = 1;
  }
  {
    // Expand by the safety ring around existing structures.
    std::vector<Coord> base;
    for (int z = 0; z < dims.nz; ++z) {
      for (int y = 0; y < dims.ny; ++y) {
        for (int x = 0; x < dims.nx; ++x) {
          if (occupied[dims.index(x, y, z)]) base.push_back({x, y, z});
        }
      }
    }
    occupy(occupied, dims, base, 2);
  }

  for (int i = 0; i < n_fp; ++i) {
    const std::vector<Coord> voxels = place_blob(rng, spec, occupied, i);
    occupy(occupied, dims, voxels, 2);
    const std::int32_t id = n_gt + 1 + i;
    for (const Coord& v : voxels) pred.labels[dims.index(v.x, v.y, v.z)] = id;
    if (stack) {
      paint(*stack, voxels, spec.lesion_offset * spec.decoy_offset_scale,
            spec.secondary_offset * spec.decoy_offset_scale);
    }
  }
  return pred;
}

}  // namespace salref
