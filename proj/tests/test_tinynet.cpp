#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "salref/rng.hpp"
#include "salref/tinynet.hpp"

using namespace salref;

namespace {

VolumeStack random_stack(Dims d, int channels, std::uint64_t seed) {
  VolumeStack s(d, channels);
  Rng rng(seed);
  for (double& v : s.data) v = rng.normal(0.0, 1.0);
  return s;
}

}  // namespace

TEST_CASE("zero parameters give uniform 0.5 output") {
  TinyNetParams p = init_tinynet(2, 1);
  std::fill(p.w1.begin(), p.w1.end(), 0.0);
  std::fill(p.w2.begin(), p.w2.end(), 0.0);
  std::fill(p.w3.begin(), p.w3.end(), 0.0);
  p.b3 = 0.0;
  TinyNet net(p);
  Volume3D out = net.forward(random_stack({4, 4, 4}, 2, 3));
  for (double v : out.data) CHECK(v == 0.5);
}

TEST_CASE("forward is deterministic and in (0,1)") {
  TinyNetParams p = init_tinynet(2, 99);
  TinyNet net(p);
  VolumeStack in = random_stack({6, 6, 6}, 2, 4);
  Volume3D a = net.forward(in), b = net.forward(in);
  CHECK(a.data == b.data);
  for (double v : a.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("identity-passing configuration reduces to a per-voxel sigmoid") {
  // conv1: channel 0 passes through unit-center kernel on hidden 0 with a
  // large bias keeping ReLU linear; conv2 likewise; conv3 reads hidden 0.
  TinyNetParams p = init_tinynet(1, 0);
  std::fill(p.w1.begin(), p.w1.end(), 0.0);
  std::fill(p.w2.begin(), p.w2.end(), 0.0);
  std::fill(p.w3.begin(), p.w3.end(), 0.0);
  const int kc = 13;  // center of a 3x3x3 kernel
  p.w1[0 * 27 + kc] = 1.0;
  p.b1[0] = 100.0;  // keeps pre-activation positive for bounded inputs
  p.w2[0 * 8 * 27 + 0 * 27 + kc] = 1.0;
  p.b2[0] = 0.0;
  p.w3[0] = 2.0;
  p.b3 = -203.0;  // cancels the bias chain: 2*(x + 100) - 203 = 2x - 3
  TinyNet net(p);

  VolumeStack in = random_stack({4, 4, 4}, 1, 8);
  Volume3D out = net.forward(in);
  for (int z = 0; z < 4; ++z) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        const double expect =
            1.0 / (1.0 + std::exp(-(2.0 * in.at(0, x, y, z) - 3.0)));
        CHECK(out.at(x, y, z) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  // and its gradient is the analytic chain: sig'(z) * 2 at the voxel itself
  const Coord v{2, 1, 3};
  Volume3D g = net.input_gradient(in, v, 0);
  const double s = out.at(v.x, v.y, v.z);
  CHECK(g.at(v.x, v.y, v.z) == doctest::Approx(s * (1.0 - s) * 2.0).epsilon(1e-10));
}

TEST_CASE("gradient support is confined to the 5x5x5 receptive field") {
  TinyNetParams p = init_tinynet(2, 17);
  TinyNet net(p);
  VolumeStack in = random_stack({9, 9, 9}, 2, 5);
  const Coord v{4, 4, 4};
  Volume3D g = net.input_gradient(in, v, 0);
  for (int z = 0; z < 9; ++z) {
    for (int y = 0; y < 9; ++y) {
      for (int x = 0; x < 9; ++x) {
        if (std::abs(x - 4) > 2 || std::abs(y - 4) > 2 || std::abs(z - 4) > 2) {
          CHECK(g.at(x, y, z) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("input gradient matches central finite differences") {
  // 10 seeds x 10 random voxels, rel err <= 1e-4
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TinyNetParams p = init_tinynet(2, seed);
    TinyNet net(p);
    VolumeStack in = random_stack({7, 7, 7}, 2, seed + 100);
    Rng pick(seed + 200);
    const Coord v_out{static_cast<int>(pick.uniform_int(0, 6)),
                      static_cast<int>(pick.uniform_int(0, 6)),
                      static_cast<int>(pick.uniform_int(0, 6))};
    const int channel = static_cast<int>(pick.uniform_int(0, 1));
    Volume3D g = net.input_gradient(in, v_out, channel);
    for (int k = 0; k < 10; ++k) {
      const Coord v_in{
          std::clamp(v_out.x + static_cast<int>(pick.uniform_int(-2, 2)), 0, 6),
          std::clamp(v_out.y + static_cast<int>(pick.uniform_int(-2, 2)), 0, 6),
          std::clamp(v_out.z + static_cast<int>(pick.uniform_int(-2, 2)), 0, 6)};
      const double fd = oracle::fd_gradient(net, in, v_out, channel, v_in);
      const double an = g.at(v_in.x, v_in.y, v_in.z);
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(std::abs(fd - an) / scale <= 1e-4);
    }
  }
}

TEST_CASE("instance_gradients agrees with per-voxel input_gradient") {
  TinyNetParams p = init_tinynet(1, 5);
  TinyNet net(p);
  VolumeStack in = random_stack({6, 6, 6}, 1, 6);
  const std::vector<Coord> outs = {{1, 1, 1}, {2, 3, 4}, {5, 5, 5}};
  std::size_t calls = 0;
  net.instance_gradients(in, outs, 0, [&](std::size_t i, const Volume3D& g,
                                          Coord lo, Coord hi) {
    Volume3D ref = net.input_gradient(in, outs[i], 0);
    for (int z = lo.z; z <= hi.z; ++z) {
      for (int y = lo.y; y <= hi.y; ++y) {
        for (int x = lo.x; x <= hi.x; ++x) {
          CHECK(g.at(x, y, z) == doctest::Approx(ref.at(x, y, z)).epsilon(1e-12));
        }
      }
    }
    ++calls;
  });
  CHECK(calls == outs.size());
}

TEST_CASE("translation covariance in the interior") {
  TinyNetParams p = init_tinynet(1, 23);
  TinyNet net(p);
  const Dims d{8, 8, 8};
  VolumeStack a = random_stack(d, 1, 7);
  VolumeStack b(d, 1);
  for (int z = 0; z < 8; ++z) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 1; x < 8; ++x) b.at(0, x, y, z) = a.at(0, x - 1, y, z);
    }
  }
  Volume3D fa = net.forward(a), fb = net.forward(b);
  // interior excludes a 3-voxel ring (shift + receptive radius)
  for (int z = 3; z < 5; ++z) {
    for (int y = 3; y < 5; ++y) {
      for (int x = 3; x < 5; ++x) {
        CHECK(fb.at(x, y, z) == doctest::Approx(fa.at(x - 1, y, z)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("training: 0 epochs is the identity, same seed reproduces") {
  TinyNetParams p = init_tinynet(1, 3);
  TrainSample s;
  s.input = random_stack({6, 6, 6}, 1, 9);
  s.target = BinaryMask({6, 6, 6});
  s.target.set(3, 3, 3, true);
  CHECK(train_tiny(p, {s}, 0, 1e-2, 1).params.w1 == p.w1);

  TrainResult a = train_tiny(p, {s}, 5, 1e-2, 1);
  TrainResult b = train_tiny(p, {s}, 5, 1e-2, 1);
  CHECK(a.params.w1 == b.params.w1);
  CHECK(a.params.w3 == b.params.w3);
  CHECK(a.loss_per_epoch == b.loss_per_epoch);
}

TEST_CASE("training loss is non-increasing at a small learning rate") {
  TinyNetParams p = init_tinynet(1, 3);
  TrainSample s;
  s.input = random_stack({8, 8, 8}, 1, 13);
  for (int z = 2; z < 5; ++z) {
    for (int y = 2; y < 5; ++y) {
      for (int x = 2; x < 5; ++x) s.input.at(0, x, y, z) += 3.0;
    }
  }
  s.target = BinaryMask({8, 8, 8});
  for (int z = 2; z < 5; ++z) {
    for (int y = 2; y < 5; ++y) {
      for (int x = 2; x < 5; ++x) s.target.set(x, y, z, true);
    }
  }
  TrainResult r = train_tiny(p, {s}, 30, 1e-2, 1);
  for (std::size_t i = 1; i < r.loss_per_epoch.size(); ++i) {
    CHECK(r.loss_per_epoch[i] <= r.loss_per_epoch[i - 1] + 1e-12);
  }
}

TEST_CASE("single-phantom overfit reaches soft dice 0.8") {
  TinyNetParams p = init_tinynet(1, 21);
  TrainSample s;
  s.input = random_stack({10, 10, 10}, 1, 22);
  s.target = BinaryMask({10, 10, 10});
  for (int z = 3; z < 7; ++z) {
    for (int y = 3; y < 7; ++y) {
      for (int x = 3; x < 7; ++x) {
        s.input.at(0, x, y, z) += 4.0;
        s.target.set(x, y, z, true);
      }
    }
  }
  TrainResult r = train_tiny(p, {s}, 200, 0.05, 1);
  TinyNet net(r.params);
  CHECK(soft_dice(net.forward(s.input), s.target) >= 0.8);
}

TEST_CASE("params serialize and reload bit-exactly") {
  TinyNetParams p = init_tinynet(3, 77);
  const auto path = std::filesystem::temp_directory_path() / "tiny.bin";
  save_tinynet(p, path);
  TinyNetParams r = load_tinynet(path);
  CHECK(r.c_in == 3);
  CHECK(r.w1 == p.w1);
  CHECK(r.b1 == p.b1);
  CHECK(r.w2 == p.w2);
  CHECK(r.b2 == p.b2);
  CHECK(r.w3 == p.w3);
  CHECK(r.b3 == p.b3);
  CHECK(std::filesystem::exists(path.string() + ".json"));
}

TEST_CASE("channel mismatch rejected") {
  TinyNet net(init_tinynet(2, 1));
  CHECK_THROWS_AS(net.forward(VolumeStack({4, 4, 4}, 1)), ValidationError);
  CHECK_THROWS_AS(
      net.input_gradient(random_stack({4, 4, 4}, 2, 1), {9, 0, 0}, 0),
      ValidationError);
}
