#include "salref/instances.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>

namespace salref {

BinaryMask LesionInstance::to_mask(const Dims& dims) const {
  BinaryMask m(dims);
  for (const Coord& v : voxels) m.set(v.x, v.y, v.z, true);
  return m;
}

bool MatchResult::is_tp(int pred_id) const {
  return std::any_of(tp.begin(), tp.end(),
                     [&](const auto& p) { return p.first == pred_id; });
}

namespace {

std::vector<Coord> neighbor_offsets(int connectivity) {
  std::vector<Coord> offs;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        offs.push_back({dx, dy, dz});
      }
    }
  }
  return offs;
}

LesionInstance finalize_instance(int id, std::vector<Coord> voxels,
                                 const Dims& dims) {
  // Canonical voxel order: x-fastest scan.
  std::sort(voxels.begin(), voxels.end(), [&](const Coord& a, const Coord& b) {
    return dims.index(a.x, a.y, a.z) < dims.index(b.x, b.y, b.z);
  });
  LesionInstance inst;
  inst.id = id;
  inst.bbox_min = inst.bbox_max = voxels.front();
  for (const Coord& v : voxels) {
    inst.bbox_min.x = std::min(inst.bbox_min.x, v.x);
    inst.bbox_min.y = std::min(inst.bbox_min.y, v.y);
    inst.bbox_min.z = std::min(inst.bbox_min.z, v.z);
    inst.bbox_max.x = std::max(inst.bbox_max.x, v.x);
    inst.bbox_max.y = std::max(inst.bbox_max.y, v.y);
    inst.bbox_max.z = std::max(inst.bbox_max.z, v.z);
  }
  inst.cardinality = voxels.size();
  inst.voxels = std::move(voxels);
  return inst;
}

}  // namespace

std::pair<LabelMap, std::vector<LesionInstance>> connected_components(
    const BinaryMask& mask, int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw ValidationError("connectivity must be 6, 18 or 26");
  }
  if (mask.dims.nx <= 0 || mask.dims.ny <= 0 || mask.dims.nz <= 0) {
    throw ValidationError("connected_components: degenerate mask dims");
  }
  const Dims& dims = mask.dims;
  const auto offs = neighbor_offsets(connectivity);

  LabelMap out(dims);
  std::vector<LesionInstance> instances;
  int next_label = 0;

  for (int z = 0; z < dims.nz; ++z) {
    for (int y = 0; y < dims.ny; ++y) {
      for (int x = 0; x < dims.nx; ++x) {
        if (!mask.get(x, y, z) || out.get(x, y, z) != 0) continue;
        ++next_label;
        std::vector<Coord> voxels;
        std::deque<Coord> queue{{x, y, z}};
        out.labels[dims.index(x, y, z)] = next_label;
        while (!queue.empty()) {
          const Coord c = queue.front();
          queue.pop_front();
          voxels.push_back(c);
          for (const Coord& o : offs) {
            const int nx = c.x + o.x, ny = c.y + o.y, nz = c.z + o.z;
            if (!dims.contains(nx, ny, nz)) continue;
            const std::size_t idx = dims.index(nx, ny, nz);
            if (mask.bits[idx] != 0 && out.labels[idx] == 0) {
              out.labels[idx] = next_label;
              queue.push_back({nx, ny, nz});
            }
          }
        }
        instances.push_back(finalize_instance(next_label, std::move(voxels), dims));
      }
    }
  }
  return {std::move(out), std::move(instances)};
}

std::vector<LesionInstance> instances_from_labels(const LabelMap& labels) {
  std::map<std::int32_t, std::vector<Coord>> groups;
  const Dims& dims = labels.dims;
  for (int z = 0; z < dims.nz; ++z) {
    for (int y = 0; y < dims.ny; ++y) {
      for (int x = 0; x < dims.nx; ++x) {
        const std::int32_t l = labels.get(x, y, z);
        if (l > 0) groups[l].push_back({x, y, z});
      }
    }
  }
  std::vector<LesionInstance> out;
  out.reserve(groups.size());
  for (auto& [id, voxels] : groups) {
    out.push_back(finalize_instance(static_cast<int>(id), std::move(voxels), dims));
  }
  return out;
}

MatchResult match_lesions(const LabelMap& pred, const LabelMap& gt) {
  if (!(pred.dims == gt.dims)) {
    throw ValidationError("match_lesions: dims mismatch");
  }
  std::map<std::int32_t, std::set<std::int32_t>> overlaps;  // pred -> gt ids
  std::set<std::int32_t> pred_ids, gt_ids, gt_hit;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const std::int32_t p = pred.labels[i];
    const std::int32_t g = gt.labels[i];
    if (p > 0) pred_ids.insert(p);
    if (g > 0) gt_ids.insert(g);
    if (p > 0 && g > 0) {
      overlaps[p].insert(g);
      gt_hit.insert(g);
    }
  }

  MatchResult r;
  for (std::int32_t p : pred_ids) {
    auto it = overlaps.find(p);
    if (it != overlaps.end()) {
      r.tp.emplace_back(p, std::vector<int>(it->second.begin(), it->second.end()));
    } else {
      r.fp.push_back(p);
    }
  }
  for (std::int32_t g : gt_ids) {
    if (!gt_hit.count(g)) r.fn.push_back(g);
  }
  r.n_tp = static_cast<int>(r.tp.size());
  r.n_fp = static_cast<int>(r.fp.size());
  r.n_fn = static_cast<int>(r.fn.size());
  return r;
}

BinaryMask dilate(const BinaryMask& mask, int radius, Structuring structuring) {
  if (radius < 1) throw ValidationError("dilate: radius must be >= 1");
  const auto offs = neighbor_offsets(structuring == Structuring::k6 ? 6 : 26);
  const Dims& dims = mask.dims;
  BinaryMask cur = mask;
  for (int r = 0; r < radius; ++r) {
    BinaryMask next = cur;
    for (int z = 0; z < dims.nz; ++z) {
      for (int y = 0; y < dims.ny; ++y) {
        for (int x = 0; x < dims.nx; ++x) {
          if (!cur.get(x, y, z)) continue;
          for (const Coord& o : offs) {
            const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
            if (dims.contains(nx, ny, nz)) next.set(nx, ny, nz, true);
          }
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace salref
