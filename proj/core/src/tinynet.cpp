#include "salref/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "salref/rng.hpp"

namespace salref {

namespace {

constexpr int kH = TinyNetParams::kHidden;
constexpr int kK = TinyNetParams::kKernel;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::size_t w_index(int oc, int ic, int c_in, int dz, int dy, int dx) {
  return ((static_cast<std::size_t>(oc) * c_in + ic) * 27) +
         ((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1);
}

struct ForwardCache {
  Dims dims;
  std::vector<double> a1pre, a1;  // [kH][n]
  std::vector<double> a2pre, a2;  // [kH][n]
  std::vector<double> z3, y;      // [n]
};

// conv3d k=3, zero padding, in: [c_in][n] -> out_pre: [c_out][n]
void conv3(const Dims& dims, const double* in, int c_in, const double* w,
           const double* b, int c_out, double* out_pre) {
  const std::size_t n = dims.count();
  for (int oc = 0; oc < c_out; ++oc) {
    double* out = out_pre + oc * n;
    for (int z = 0; z < dims.nz; ++z) {
      for (int y = 0; y < dims.ny; ++y) {
        for (int x = 0; x < dims.nx; ++x) {
          double acc = b[oc];
          for (int ic = 0; ic < c_in; ++ic) {
            const double* src = in + ic * n;
            for (int dz = -1; dz <= 1; ++dz) {
              const int zz = z + dz;
              if (zz < 0 || zz >= dims.nz) continue;
              for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= dims.ny) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx;
                  if (xx < 0 || xx >= dims.nx) continue;
                  acc += w[w_index(oc, ic, c_in, dz, dy, dx)] *
                         src[dims.index(xx, yy, zz)];
                }
              }
            }
          }
          out[dims.index(x, y, z)] = acc;
        }
      }
    }
  }
}

ForwardCache run_forward(const TinyNetParams& p, const VolumeStack& input) {
  if (input.channels != p.c_in) {
    throw ValidationError("tinynet: input channel count mismatch");
  }
  if (input.dims.nx < kK || input.dims.ny < kK || input.dims.nz < kK) {
    throw ValidationError("tinynet: input dims smaller than kernel footprint");
  }
  const Dims dims = input.dims;
  const std::size_t n = dims.count();

  ForwardCache c;
  c.dims = dims;
  c.a1pre.resize(kH * n);
  c.a1.resize(kH * n);
  c.a2pre.resize(kH * n);
  c.a2.resize(kH * n);
  c.z3.resize(n);
  c.y.resize(n);

  conv3(dims, input.data.data(), p.c_in, p.w1.data(), p.b1.data(), kH,
        c.a1pre.data());
  for (std::size_t i = 0; i < c.a1pre.size(); ++i) {
    c.a1[i] = c.a1pre[i] > 0.0 ? c.a1pre[i] : 0.0;
  }
  conv3(dims, c.a1.data(), kH, p.w2.data(), p.b2.data(), kH, c.a2pre.data());
  for (std::size_t i = 0; i < c.a2pre.size(); ++i) {
    c.a2[i] = c.a2pre[i] > 0.0 ? c.a2pre[i] : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double z = p.b3;
    for (int ch = 0; ch < kH; ++ch) z += p.w3[ch] * c.a2[ch * n + i];
    c.z3[i] = z;
    c.y[i] = sigmoid(z);
  }
  return c;
}

// Gradient of the score at v_out w.r.t. one input channel, written into `out`
// (assumed zero). Returns the inclusive support window.
void backward_voxel(const TinyNetParams& p, const ForwardCache& c, Coord v_out,
                    int channel, bool wrt_logit, Volume3D& out, Coord& lo,
                    Coord& hi) {
  const Dims& dims = c.dims;
  const std::size_t n = dims.count();
  const std::size_t vi = dims.index(v_out.x, v_out.y, v_out.z);

  const double y = c.y[vi];
  const double dz3 = wrt_logit ? 1.0 : y * (1.0 - y);

  // conv3 (k=1) and ReLU2: gradient w.r.t. a2pre, supported at v_out only.
  double g2pre[kH];
  for (int ch = 0; ch < kH; ++ch) {
    g2pre[ch] = (c.a2pre[ch * n + vi] > 0.0) ? p.w3[ch] * dz3 : 0.0;
  }

  // conv2 transpose: gradient w.r.t. a1, 3x3x3 window around v_out.
  // Stored in a local 3^3 x kH block indexed relative to v_out.
  double g1[kH][27] = {};
  for (int oc = 0; oc < kH; ++oc) {
    if (g2pre[oc] == 0.0) continue;
    for (int ic = 0; ic < kH; ++ic) {
      for (int dz = -1; dz <= 1; ++dz) {
        const int zz = v_out.z + dz;
        if (zz < 0 || zz >= dims.nz) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = v_out.y + dy;
          if (yy < 0 || yy >= dims.ny) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = v_out.x + dx;
            if (xx < 0 || xx >= dims.nx) continue;
            const int rel = ((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1);
            g1[ic][rel] += g2pre[oc] * p.w2[w_index(oc, ic, kH, dz, dy, dx)];
          }
        }
      }
    }
  }
  // ReLU1 gate.
  for (int ic = 0; ic < kH; ++ic) {
    for (int rel = 0; rel < 27; ++rel) {
      if (g1[ic][rel] == 0.0) continue;
      const int dz = rel / 9 - 1, dy = (rel / 3) % 3 - 1, dx = rel % 3 - 1;
      const int xx = v_out.x + dx, yy = v_out.y + dy, zz = v_out.z + dz;
      if (!dims.contains(xx, yy, zz) ||
          c.a1pre[ic * n + dims.index(xx, yy, zz)] <= 0.0) {
        g1[ic][rel] = 0.0;
      }
    }
  }

  // conv1 transpose into the selected input channel, 5x5x5 window.
  const int r = TinyNetParams::kReceptiveRadius;
  lo = {std::max(0, v_out.x - r), std::max(0, v_out.y - r),
        std::max(0, v_out.z - r)};
  hi = {std::min(dims.nx - 1, v_out.x + r), std::min(dims.ny - 1, v_out.y + r),
        std::min(dims.nz - 1, v_out.z + r)};
  for (int ic = 0; ic < kH; ++ic) {
    for (int rel = 0; rel < 27; ++rel) {
      const double g = g1[ic][rel];
      if (g == 0.0) continue;
      const int hz = v_out.z + rel / 9 - 1;
      const int hy = v_out.y + (rel / 3) % 3 - 1;
      const int hx = v_out.x + rel % 3 - 1;
      for (int dz = -1; dz <= 1; ++dz) {
        const int zz = hz + dz;
        if (zz < 0 || zz >= dims.nz) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = hy + dy;
          if (yy < 0 || yy >= dims.ny) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = hx + dx;
            if (xx < 0 || xx >= dims.nx) continue;
            out.data[dims.index(xx, yy, zz)] +=
                g * p.w1[w_index(ic, channel, p.c_in, dz, dy, dx)];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t TinyNetParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1;
}

void TinyNetParams::validate() const {
  if (c_in < 1) throw ValidationError("tinynet: c_in must be >= 1");
  const std::size_t e1 = static_cast<std::size_t>(kH) * c_in * 27;
  const std::size_t e2 = static_cast<std::size_t>(kH) * kH * 27;
  if (w1.size() != e1 || b1.size() != kH || w2.size() != e2 ||
      b2.size() != kH || w3.size() != kH) {
    throw ValidationError("tinynet: parameter shapes inconsistent with architecture");
  }
  auto all_finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(),
                       [](double x) { return std::isfinite(x); });
  };
  if (!all_finite(w1) || !all_finite(b1) || !all_finite(w2) || !all_finite(b2) ||
      !all_finite(w3) || !std::isfinite(b3)) {
    throw ValidationError("tinynet: non-finite parameter");
  }
}

TinyNetParams init_tinynet(int c_in, std::uint64_t seed) {
  if (c_in < 1) throw ValidationError("tinynet: c_in must be >= 1");
  TinyNetParams p;
  p.c_in = c_in;
  p.seed = seed;
  p.w1.resize(static_cast<std::size_t>(kH) * c_in * 27);
  p.b1.assign(kH, 0.0);
  p.w2.resize(static_cast<std::size_t>(kH) * kH * 27);
  p.b2.assign(kH, 0.0);
  p.w3.resize(kH);

  Rng rng(seed);
  auto fill = [&](std::vector<double>& w, int fan_in) {
    const double a = std::sqrt(1.0 / fan_in);
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * a;
  };
  fill(p.w1, c_in * 27);
  fill(p.w2, kH * 27);
  fill(p.w3, kH);
  return p;
}

TinyNet::TinyNet(TinyNetParams params, GradTarget target)
    : params_(std::move(params)), target_(target) {
  params_.validate();
}

Volume3D TinyNet::forward(const VolumeStack& input) const {
  ForwardCache c = run_forward(params_, input);
  Volume3D out(input.dims, 0.0, "probability");
  out.spacing = input.spacing;
  out.data = std::move(c.y);
  return out;
}

Volume3D TinyNet::input_gradient(const VolumeStack& input, Coord v_out,
                                 int channel) const {
  if (!input.dims.contains(v_out.x, v_out.y, v_out.z)) {
    throw ValidationError("input_gradient: v_out outside volume");
  }
  if (channel < 0 || channel >= params_.c_in) {
    throw ValidationError("input_gradient: bad channel index");
  }
  ForwardCache c = run_forward(params_, input);
  Volume3D out(input.dims, 0.0, "gradient");
  out.spacing = input.spacing;
  Coord lo, hi;
  backward_voxel(params_, c, v_out, channel,
                 target_ == GradTarget::kLogit, out, lo, hi);
  return out;
}

void TinyNet::instance_gradients(const VolumeStack& input,
                                 const std::vector<Coord>& v_outs, int channel,
                                 const GradientSink& sink) const {
  if (channel < 0 || channel >= params_.c_in) {
    throw ValidationError("instance_gradients: bad channel index");
  }
  for (const Coord& v : v_outs) {
    if (!input.dims.contains(v.x, v.y, v.z)) {
      throw ValidationError("instance_gradients: v_out outside volume");
    }
  }
  ForwardCache c = run_forward(params_, input);
  Volume3D buf(input.dims, 0.0, "gradient");
  buf.spacing = input.spacing;
  for (std::size_t i = 0; i < v_outs.size(); ++i) {
    Coord lo, hi;
    backward_voxel(params_, c, v_outs[i], channel,
                   target_ == GradTarget::kLogit, buf, lo, hi);
    sink(i, buf, lo, hi);
    for (int z = lo.z; z <= hi.z; ++z) {
      for (int y = lo.y; y <= hi.y; ++y) {
        for (int x = lo.x; x <= hi.x; ++x) {
          buf.data[input.dims.index(x, y, z)] = 0.0;
        }
      }
    }
  }
}

void Scorer::instance_gradients(const VolumeStack& input,
                                const std::vector<Coord>& v_outs, int channel,
                                const GradientSink& sink) const {
  const Dims& dims = input.dims;
  for (std::size_t i = 0; i < v_outs.size(); ++i) {
    Volume3D g = input_gradient(input, v_outs[i], channel);
    sink(i, g, {0, 0, 0}, {dims.nx - 1, dims.ny - 1, dims.nz - 1});
  }
}

double soft_dice(const Volume3D& prob, const BinaryMask& target) {
  if (!(prob.dims == target.dims)) {
    throw ValidationError("soft_dice: dims mismatch");
  }
  constexpr double kEps = 1.0;
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
  for (std::size_t i = 0; i < prob.data.size(); ++i) {
    const double g = target.bits[i] ? 1.0 : 0.0;
    inter += prob.data[i] * g;
    sum_p += prob.data[i];
    sum_g += g;
  }
  return (2.0 * inter + kEps) / (sum_p + sum_g + kEps);
}

TrainResult train_tiny(const TinyNetParams& params,
                       const std::vector<TrainSample>& dataset, int epochs,
                       double lr, std::uint64_t /*seed*/) {
  params.validate();
  if (dataset.empty()) throw ValidationError("train_tiny: empty dataset");
  for (const auto& s : dataset) {
    if (!(s.input.dims == s.target.dims)) {
      throw ValidationError("train_tiny: sample dims mismatch");
    }
  }

  TinyNetParams p = params;
  TrainResult result;
  const int c_in = p.c_in;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<double> gw1(p.w1.size(), 0.0), gb1(kH, 0.0);
    std::vector<double> gw2(p.w2.size(), 0.0), gb2(kH, 0.0);
    std::vector<double> gw3(kH, 0.0);
    double gb3 = 0.0;
    double total_loss = 0.0;

    for (const TrainSample& s : dataset) {
      const Dims dims = s.input.dims;
      const std::size_t n = dims.count();
      ForwardCache c = run_forward(p, s.input);

      // Loss: mean voxel BCE + (1 - soft Dice).
      constexpr double kEps = 1.0;
      double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_g = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = s.target.bits[i] ? 1.0 : 0.0;
        const double y = c.y[i];
        // Numerically stable BCE from the logit.
        const double z = c.z3[i];
        bce += std::max(z, 0.0) - z * g + std::log1p(std::exp(-std::abs(z)));
        inter += y * g;
        sum_p += y;
        sum_g += g;
      }
      bce /= static_cast<double>(n);
      const double dice = (2.0 * inter + kEps) / (sum_p + sum_g + kEps);
      total_loss += bce + (1.0 - dice);

      // dLoss/dz3 per voxel.
      const double denom = sum_p + sum_g + kEps;
      std::vector<double> dz3(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = s.target.bits[i] ? 1.0 : 0.0;
        const double y = c.y[i];
        const double d_bce = (y - g) / static_cast<double>(n);
        const double d_dice_dy = (2.0 * g * denom - (2.0 * inter + kEps)) /
                                 (denom * denom);
        dz3[i] = d_bce + (-d_dice_dy) * y * (1.0 - y);
      }

      // conv3 (k=1) backward.
      std::vector<double> g2pre(kH * n);
      for (int ch = 0; ch < kH; ++ch) {
        double acc_w = 0.0;
        const double* a2 = c.a2.data() + ch * n;
        const double* a2pre = c.a2pre.data() + ch * n;
        double* gp = g2pre.data() + ch * n;
        for (std::size_t i = 0; i < n; ++i) {
          acc_w += dz3[i] * a2[i];
          gp[i] = (a2pre[i] > 0.0) ? dz3[i] * p.w3[ch] : 0.0;
        }
        gw3[ch] += acc_w;
      }
      for (std::size_t i = 0; i < n; ++i) gb3 += dz3[i];

      // conv2 backward: weight grads and gradient w.r.t. a1.
      std::vector<double> g1pre(kH * n, 0.0);
      for (int oc = 0; oc < kH; ++oc) {
        const double* go = g2pre.data() + oc * n;
        double acc_b = 0.0;
        for (int z = 0; z < dims.nz; ++z) {
          for (int y = 0; y < dims.ny; ++y) {
            for (int x = 0; x < dims.nx; ++x) {
              const double g = go[dims.index(x, y, z)];
              if (g == 0.0) continue;
              acc_b += g;
              for (int ic = 0; ic < kH; ++ic) {
                const double* a1 = c.a1.data() + ic * n;
                double* g1 = g1pre.data() + ic * n;
                for (int dz = -1; dz <= 1; ++dz) {
                  const int zz = z + dz;
                  if (zz < 0 || zz >= dims.nz) continue;
                  for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= dims.ny) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                      const int xx = x + dx;
                      if (xx < 0 || xx >= dims.nx) continue;
                      const std::size_t ni = dims.index(xx, yy, zz);
                      gw2[w_index(oc, ic, kH, dz, dy, dx)] += g * a1[ni];
                      g1[ni] += g * p.w2[w_index(oc, ic, kH, dz, dy, dx)];
                    }
                  }
                }
              }
            }
          }
        }
        gb2[oc] += acc_b;
      }
      // ReLU1 gate.
      for (std::size_t i = 0; i < g1pre.size(); ++i) {
        if (c.a1pre[i] <= 0.0) g1pre[i] = 0.0;
      }

      // conv1 backward: weight grads only.
      for (int oc = 0; oc < kH; ++oc) {
        const double* go = g1pre.data() + oc * n;
        double acc_b = 0.0;
        for (int z = 0; z < dims.nz; ++z) {
          for (int y = 0; y < dims.ny; ++y) {
            for (int x = 0; x < dims.nx; ++x) {
              const double g = go[dims.index(x, y, z)];
              if (g == 0.0) continue;
              acc_b += g;
              for (int ic = 0; ic < c_in; ++ic) {
                const double* in = s.input.channel_data(ic);
                for (int dz = -1; dz <= 1; ++dz) {
                  const int zz = z + dz;
                  if (zz < 0 || zz >= dims.nz) continue;
                  for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= dims.ny) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                      const int xx = x + dx;
                      if (xx < 0 || xx >= dims.nx) continue;
                      gw1[w_index(oc, ic, c_in, dz, dy, dx)] +=
                          g * in[dims.index(xx, yy, zz)];
                    }
                  }
                }
              }
            }
          }
        }
        gb1[oc] += acc_b;
      }
    }

    const double mean_loss = total_loss / static_cast<double>(dataset.size());
    if (!std::isfinite(mean_loss)) {
      throw DivergenceError("train_tiny: NaN loss at epoch " +
                            std::to_string(epoch));
    }
    result.loss_per_epoch.push_back(mean_loss);

    const double scale = lr / static_cast<double>(dataset.size());
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] -= scale * gw1[i];
    for (int i = 0; i < kH; ++i) p.b1[i] -= scale * gb1[i];
    for (std::size_t i = 0; i < p.w2.size(); ++i) p.w2[i] -= scale * gw2[i];
    for (int i = 0; i < kH; ++i) p.b2[i] -= scale * gb2[i];
    for (int i = 0; i < kH; ++i) p.w3[i] -= scale * gw3[i];
    p.b3 -= scale * gb3;
  }

  result.params = std::move(p);
  return result;
}

namespace {
constexpr char kMagic[8] = {'T', 'N', 'E', 'T', 'P', 'R', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_tinynet(const TinyNetParams& params,
                  const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for write: " + path.string());
  out.write(kMagic, 8);
  auto put_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  auto put_vec = [&](const std::vector<double>& v) {
    put_u32(static_cast<std::uint32_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()), v.size() * 8);
  };
  put_u32(kVersion);
  put_u32(static_cast<std::uint32_t>(params.c_in));
  std::uint64_t seed = params.seed;
  out.write(reinterpret_cast<const char*>(&seed), 8);
  put_vec(params.w1);
  put_vec(params.b1);
  put_vec(params.w2);
  put_vec(params.b2);
  put_vec(params.w3);
  out.write(reinterpret_cast<const char*>(&params.b3), 8);
  if (!out) throw Error("write failed: " + path.string());

  nlohmann::json meta = {
      {"format", "tinynet-params"},
      {"version", kVersion},
      {"c_in", params.c_in},
      {"hidden_channels", TinyNetParams::kHidden},
      {"layers",
       {"conv3d(k=3)+relu", "conv3d(k=3)+relu", "conv3d(k=1)+sigmoid"}},
      {"parameter_count", params.parameter_count()},
      {"seed", params.seed},
  };
  std::ofstream side(path.string() + ".json", std::ios::trunc);
  side << meta.dump(2) << "\n";
}

TinyNetParams load_tinynet(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open params file: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("bad params magic in " + path.string());
  }
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_vec = [&]() {
    const std::uint32_t len = get_u32();
    std::vector<double> v(len);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len) * 8);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kVersion) {
    throw UnsupportedError("unsupported params version in " + path.string());
  }
  TinyNetParams p;
  p.c_in = static_cast<int>(get_u32());
  in.read(reinterpret_cast<char*>(&p.seed), 8);
  p.w1 = get_vec();
  p.b1 = get_vec();
  p.w2 = get_vec();
  p.b2 = get_vec();
  p.w3 = get_vec();
  in.read(reinterpret_cast<char*>(&p.b3), 8);
  if (!in) throw FormatError("truncated params file: " + path.string());
  p.validate();
  return p;
}

}  // namespace salref
