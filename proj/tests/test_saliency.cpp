#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "salref/rng.hpp"
#include "salref/saliency.hpp"
#include "salref/tinynet.hpp"

using namespace salref;

namespace {

VolumeStack random_stack(Dims d, int channels, std::uint64_t seed) {
  VolumeStack s(d, channels);
  Rng rng(seed);
  for (double& v : s.data) v = rng.normal(0.0, 1.0);
  return s;
}

LesionInstance make_instance(int id, std::vector<Coord> voxels) {
  LesionInstance li;
  li.id = id;
  li.voxels = std::move(voxels);
  li.cardinality = li.voxels.size();
  return li;
}

// y[v'] = sum_v W(v' - v) x[v] on channel 0, a fixed linear map with constant
// gradients: gradient of y[v'] w.r.t. x[v] is W(v' - v), input-independent.
class LinearScorer : public Scorer {
 public:
  int input_channels() const override { return 1; }

  static double w(int dx, int dy, int dz) {
    if (std::abs(dx) > 1 || std::abs(dy) > 1 || std::abs(dz) > 1) return 0.0;
    return 1.0 + dx + 2 * dy + 4 * dz + 0.5 * dx * dy;
  }

  Volume3D forward(const VolumeStack& in) const override {
    Volume3D out(in.dims);
    for (int z = 0; z < in.dims.nz; ++z) {
      for (int y = 0; y < in.dims.ny; ++y) {
        for (int x = 0; x < in.dims.nx; ++x) {
          double s = 0.0;
          for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                if (in.dims.contains(x - dx, y - dy, z - dz)) {
                  s += w(dx, dy, dz) * in.at(0, x - dx, y - dy, z - dz);
                }
              }
            }
          }
          out.at(x, y, z) = s;
        }
      }
    }
    return out;
  }

  Volume3D input_gradient(const VolumeStack& in, Coord v, int) const override {
    Volume3D g(in.dims);
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (in.dims.contains(v.x - dx, v.y - dy, v.z - dz)) {
            g.at(v.x - dx, v.y - dy, v.z - dz) = w(dx, dy, dz);
          }
        }
      }
    }
    return g;
  }
};

}  // namespace

TEST_CASE("single-voxel domain with sigma 0 is the plain gradient") {
  TinyNet net(init_tinynet(1, 4));
  VolumeStack in = random_stack({6, 6, 6}, 1, 5);
  const Coord v{3, 2, 4};
  SaliencyConfig cfg;
  cfg.n_samples = 1;
  cfg.noise_sigma = 0.0;
  SaliencyMap m = instance_saliency(net, in, make_instance(1, {v}), cfg);
  Volume3D g = net.input_gradient(in, v, 0);
  CHECK(m.map.data == g.data);
}

TEST_CASE("linear scorer: result is input, sigma and N independent") {
  LinearScorer lin;
  const Dims d{5, 5, 5};
  LesionInstance omega = make_instance(1, {{1, 1, 1}, {2, 2, 2}, {3, 1, 2}});

  SaliencyConfig a;
  a.n_samples = 1;
  a.noise_sigma = 0.0;
  a.seed = 1;
  SaliencyConfig b;
  b.n_samples = 7;
  b.noise_sigma = 0.5;
  b.seed = 999;

  SaliencyMap ma = instance_saliency(lin, random_stack(d, 1, 1), omega, a);
  SaliencyMap mb = instance_saliency(lin, random_stack(d, 1, 2), omega, b);
  for (std::size_t i = 0; i < ma.map.data.size(); ++i) {
    CHECK(mb.map.data[i] == doctest::Approx(ma.map.data[i]).epsilon(1e-12));
  }

  // and each value is the max-|.| row of the constant gradients
  for (int z = 0; z < 5; ++z) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        double best = 0.0, best_abs = 0.0;
        for (const Coord& v : omega.voxels) {
          const int dx = v.x - x, dy = v.y - y, dz = v.z - z;
          if (!d.contains(x, y, z)) continue;
          const double g = LinearScorer::w(dx, dy, dz) *
                           (std::abs(dx) <= 1 && std::abs(dy) <= 1 &&
                                    std::abs(dz) <= 1
                                ? 1.0
                                : 0.0);
          if (std::abs(g) > best_abs) {
            best_abs = std::abs(g);
            best = g;
          }
        }
        CHECK(ma.map.at(x, y, z) == doctest::Approx(best).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("matches the brute-force oracle on seeded 8^3 cases") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    TinyNet net(init_tinynet(2, seed));
    VolumeStack in = random_stack({8, 8, 8}, 2, seed + 50);
    Rng pick(seed + 100);
    std::vector<Coord> omega;
    for (int k = 0; k < 3; ++k) {
      omega.push_back({static_cast<int>(pick.uniform_int(1, 6)),
                       static_cast<int>(pick.uniform_int(1, 6)),
                       static_cast<int>(pick.uniform_int(1, 6))});
    }
    SaliencyConfig cfg;
    cfg.n_samples = 4;
    cfg.noise_sigma = 0.05;
    cfg.seed = seed * 31;
    SaliencyMap m =
        instance_saliency(net, in, make_instance(1, omega), cfg);
    Volume3D ref = oracle::naive_instance_saliency(
        net, in, make_instance(1, omega), cfg);
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
      CHECK(std::abs(m.map.data[i] - ref.data[i]) <= 1e-12);
    }
  }
}

TEST_CASE("sigma 0 result is exactly independent of N") {
  TinyNet net(init_tinynet(1, 8));
  VolumeStack in = random_stack({6, 6, 6}, 1, 9);
  LesionInstance omega = make_instance(2, {{2, 2, 2}, {3, 2, 2}});
  SaliencyConfig a, b;
  a.noise_sigma = b.noise_sigma = 0.0;
  a.n_samples = 1;
  b.n_samples = 17;
  SaliencyMap ma = instance_saliency(net, in, omega, a);
  SaliencyMap mb = instance_saliency(net, in, omega, b);
  CHECK(ma.map.data == mb.map.data);
}

TEST_CASE("support bound: zero outside the union of receptive fields") {
  TinyNet net(init_tinynet(1, 11));
  VolumeStack in = random_stack({12, 12, 12}, 1, 12);
  LesionInstance omega = make_instance(1, {{3, 3, 3}, {4, 3, 3}});
  SaliencyConfig cfg;
  cfg.n_samples = 2;
  cfg.noise_sigma = 0.05;
  cfg.seed = 3;
  SaliencyMap m = instance_saliency(net, in, omega, cfg);
  for (int z = 0; z < 12; ++z) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 12; ++x) {
        bool inside = false;
        for (const Coord& v : omega.voxels) {
          if (std::abs(x - v.x) <= 2 && std::abs(y - v.y) <= 2 &&
              std::abs(z - v.z) <= 2) {
            inside = true;
          }
        }
        if (!inside) CHECK(m.map.at(x, y, z) == 0.0);
      }
    }
  }
}

TEST_CASE("every output value appears verbatim in some gradient volume") {
  TinyNet net(init_tinynet(1, 13));
  VolumeStack in = random_stack({6, 6, 6}, 1, 14);
  LesionInstance omega = make_instance(1, {{2, 2, 2}, {3, 3, 3}});
  SaliencyConfig cfg;
  cfg.n_samples = 1;
  cfg.noise_sigma = 0.0;
  SaliencyMap m = instance_saliency(net, in, omega, cfg);
  std::vector<Volume3D> grads;
  for (const Coord& v : omega.voxels) {
    grads.push_back(net.input_gradient(in, v, 0));
  }
  for (std::size_t i = 0; i < m.map.data.size(); ++i) {
    if (m.map.data[i] == 0.0) continue;
    bool found = false;
    for (const Volume3D& g : grads) {
      if (g.data[i] == m.map.data[i]) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("empty domain and bad channel are rejected") {
  TinyNet net(init_tinynet(1, 1));
  VolumeStack in = random_stack({5, 5, 5}, 1, 1);
  SaliencyConfig cfg;
  CHECK_THROWS_AS(instance_saliency(net, in, make_instance(1, {}), cfg),
                  ValidationError);
  SaliencyConfig bad;
  bad.channel = 3;
  CHECK_THROWS_AS(
      instance_saliency(net, in, make_instance(1, {{1, 1, 1}}), bad),
      ValidationError);
}

TEST_CASE("batch of one equals a single call with the derived seed") {
  TinyNet net(init_tinynet(1, 2));
  VolumeStack in = random_stack({6, 6, 6}, 1, 3);
  LesionInstance omega = make_instance(5, {{2, 2, 2}});
  SaliencyConfig cfg;
  cfg.n_samples = 3;
  cfg.noise_sigma = 0.05;
  cfg.seed = 1000;
  std::vector<BatchEntry> batch = saliency_batch(net, in, {omega}, cfg);
  REQUIRE(batch.size() == 1);
  REQUIRE(batch[0].map.has_value());
  SaliencyConfig single = cfg;
  single.seed = derive_seed(cfg.seed, 5);
  SaliencyMap ref = instance_saliency(net, in, omega, single);
  CHECK(batch[0].map->map.data == ref.map.data);
}

TEST_CASE("batch results depend on lesion id, not position or workers") {
  TinyNet net(init_tinynet(1, 6));
  VolumeStack in = random_stack({8, 8, 8}, 1, 7);
  std::vector<LesionInstance> fwd = {make_instance(1, {{1, 1, 1}}),
                                     make_instance(2, {{4, 4, 4}}),
                                     make_instance(3, {{6, 6, 6}})};
  std::vector<LesionInstance> rev(fwd.rbegin(), fwd.rend());
  SaliencyConfig cfg;
  cfg.n_samples = 2;
  cfg.noise_sigma = 0.05;
  cfg.seed = 77;

  std::vector<BatchEntry> a = saliency_batch(net, in, fwd, cfg, 1);
  std::vector<BatchEntry> b = saliency_batch(net, in, rev, cfg, 4);
  REQUIRE(a.size() == 3);
  REQUIRE(b.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].lesion_id == fwd[i].id);
    CHECK(b[2 - i].lesion_id == a[i].lesion_id);
    CHECK(b[2 - i].map->map.data == a[i].map->map.data);
  }
}

TEST_CASE("per-lesion failures are recorded, batch continues") {
  TinyNet net(init_tinynet(1, 6));
  VolumeStack in = random_stack({6, 6, 6}, 1, 7);
  std::vector<LesionInstance> mixed = {make_instance(1, {{9, 9, 9}}),
                                       make_instance(2, {{2, 2, 2}})};
  SaliencyConfig cfg;
  std::vector<BatchEntry> out = saliency_batch(net, in, mixed, cfg);
  CHECK(!out[0].map.has_value());
  CHECK(!out[0].error.empty());
  CHECK(out[1].map.has_value());

  std::vector<LesionInstance> all_bad = {make_instance(1, {{9, 9, 9}})};
  CHECK_THROWS(saliency_batch(net, in, all_bad, cfg));
}
