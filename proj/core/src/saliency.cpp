#include "salref/saliency.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "salref/rng.hpp"

namespace salref {

void SaliencyConfig::validate() const {
  if (n_samples < 1) throw ValidationError("saliency: n_samples must be >= 1");
  if (noise_sigma < 0.0) throw ValidationError("saliency: noise_sigma must be >= 0");
}

SaliencyMap instance_saliency(const Scorer& scorer, const VolumeStack& input,
                              const LesionInstance& omega,
                              const SaliencyConfig& cfg) {
  cfg.validate();
  if (omega.voxels.empty()) {
    throw ValidationError("instance_saliency: empty lesion domain");
  }
  if (cfg.channel < 0 || cfg.channel >= input.channels) {
    throw ValidationError("instance_saliency: bad gradient channel");
  }
  const Dims& dims = input.dims;
  for (const Coord& v : omega.voxels) {
    if (!dims.contains(v.x, v.y, v.z)) {
      throw ValidationError("instance_saliency: lesion voxel outside volume");
    }
  }
  const std::size_t n = dims.count();

  // With sigma = 0 all replicas are identical; one pass gives the exact
  // result for every N.
  const int n_replicas = cfg.noise_sigma == 0.0 ? 1 : cfg.n_samples;

  Rng rng(cfg.seed);
  std::vector<double> acc(n, 0.0);
  std::vector<double> best_val(n), best_abs(n);

  for (int rep = 0; rep < n_replicas; ++rep) {
    VolumeStack noisy = input;
    if (cfg.noise_sigma > 0.0) {
      // Noise order is fixed: channel-major, x-fastest within a channel.
      for (double& v : noisy.data) v += rng.normal(0.0, cfg.noise_sigma);
    }

    std::fill(best_val.begin(), best_val.end(), 0.0);
    std::fill(best_abs.begin(), best_abs.end(), 0.0);

    // omega.voxels are in x-fastest order; a strict > comparison therefore
    // breaks magnitude ties toward the lowest output voxel in scan order.
    scorer.instance_gradients(
        noisy, omega.voxels, cfg.channel,
        [&](std::size_t, const Volume3D& grad, Coord lo, Coord hi) {
          for (int z = lo.z; z <= hi.z; ++z) {
            for (int y = lo.y; y <= hi.y; ++y) {
              for (int x = lo.x; x <= hi.x; ++x) {
                const std::size_t i = dims.index(x, y, z);
                const double g = grad.data[i];
                const double a = std::abs(g);
                if (a > best_abs[i]) {
                  best_abs[i] = a;
                  best_val[i] = g;
                }
              }
            }
          }
        });

    for (std::size_t i = 0; i < n; ++i) acc[i] += best_val[i];
  }

  SaliencyMap out;
  out.lesion_id = omega.id;
  out.config = cfg;
  out.map = Volume3D(dims, 0.0, "saliency");
  out.map.spacing = input.spacing;
  if (n_replicas == 1) {
    out.map.data = std::move(acc);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out.map.data[i] = acc[i] / static_cast<double>(n_replicas);
    }
  }
  return out;
}

std::vector<BatchEntry> saliency_batch(const Scorer& scorer,
                                       const VolumeStack& input,
                                       const std::vector<LesionInstance>& instances,
                                       const SaliencyConfig& cfg,
                                       int workers) {
  cfg.validate();
  if (instances.empty()) {
    throw ValidationError("saliency_batch: no instances");
  }
  if (workers < 1) workers = 1;

  std::vector<BatchEntry> out(instances.size());
  std::atomic<std::size_t> next{0};

  auto run = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= instances.size()) break;
      BatchEntry& entry = out[i];
      entry.lesion_id = instances[i].id;
      try {
        SaliencyConfig local = cfg;
        local.seed = derive_seed(cfg.seed,
                                 static_cast<std::uint64_t>(instances[i].id));
        entry.map = instance_saliency(scorer, input, instances[i], local);
      } catch (const std::exception& e) {
        entry.error = e.what();
      }
    }
  };

  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }

  bool any_ok = false;
  std::string first_error;
  for (const auto& e : out) {
    if (e.map) any_ok = true;
    else if (first_error.empty()) first_error = e.error;
  }
  if (!any_ok) {
    throw Error("saliency_batch: every lesion failed; first error: " + first_error);
  }
  return out;
}

}  // namespace salref
