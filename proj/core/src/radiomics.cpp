#include "salref/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>
#include <sstream>

namespace salref {

namespace {

constexpr double kLog2 = 0.6931471805599453094172321214581766;

inline double log2_(double x) { return std::log(x) / kLog2; }

// Linear-interpolation percentile over a sorted vector (numpy convention).
double percentile_sorted(const std::vector<double>& s, double q) {
  const std::size_t n = s.size();
  if (n == 1) return s[0];
  const double pos = q / 100.0 * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= n) return s[n - 1];
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + (s[lo + 1] - s[lo]) * frac;
}

std::vector<std::string> prefixed(const char* family,
                                  std::initializer_list<const char*> names) {
  std::vector<std::string> out;
  for (const char* n : names) out.push_back(std::string(family) + "_" + n);
  return out;
}

}  // namespace

const std::vector<Coord>& texture_directions() {
  // 13 unique offsets: half of the 26-neighborhood, lexicographically by
  // (dz, dy, dx) with the first nonzero component positive.
  static const std::vector<Coord> dirs = [] {
    std::vector<Coord> d;
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          if (dz > 0 || (dz == 0 && dy > 0) ||
              (dz == 0 && dy == 0 && dx > 0)) {
            d.push_back({dx, dy, dz});
          }
        }
      }
    }
    return d;
  }();
  return dirs;
}

DiscretizedROI discretize(const Volume3D& map, const BinaryMask& roi,
                          double bin_width) {
  if (!(map.dims == roi.dims)) throw ValidationError("discretize: dims mismatch");
  if (!(bin_width > 0.0)) throw ValidationError("discretize: bin width must be > 0");

  DiscretizedROI out;
  out.dims = map.dims;
  out.bin_width = bin_width;
  out.levels.assign(map.data.size(), 0);

  double mn = 0.0, mx = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    if (roi.bits[i] == 0) continue;
    const double v = map.data[i];
    if (!std::isfinite(v)) throw ValidationError("discretize: non-finite map value in ROI");
    if (first) {
      mn = mx = v;
      first = false;
    } else {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    out.roi_indices.push_back(i);
  }
  if (first) throw ValidationError("discretize: empty ROI");

  out.roi_min = mn;
  out.n_levels = static_cast<int>(std::floor((mx - mn) / bin_width)) + 1;
  for (std::size_t i : out.roi_indices) {
    int lvl = static_cast<int>(std::floor((map.data[i] - mn) / bin_width)) + 1;
    if (lvl > out.n_levels) lvl = out.n_levels;  // right edge closed
    out.levels[i] = lvl;
  }
  return out;
}

NamedFeatures first_order(const Volume3D& map, const BinaryMask& roi,
                          double bin_width) {
  DiscretizedROI disc = discretize(map, roi, bin_width);
  const std::size_t n = disc.roi_indices.size();
  const double nd = static_cast<double>(n);

  std::vector<double> vals;
  vals.reserve(n);
  for (std::size_t i : disc.roi_indices) vals.push_back(map.data[i]);
  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());

  const double mn = sorted.front(), mx = sorted.back();
  double sum = 0.0, energy = 0.0;
  for (double v : vals) {
    sum += v;
    energy += v * v;
  }
  const double mean = sum / nd;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double v : vals) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    mad += std::abs(d);
  }
  m2 /= nd;
  m3 /= nd;
  m4 /= nd;
  mad /= nd;

  const double p10 = percentile_sorted(sorted, 10.0);
  const double p25 = percentile_sorted(sorted, 25.0);
  const double median = percentile_sorted(sorted, 50.0);
  const double p75 = percentile_sorted(sorted, 75.0);
  const double p90 = percentile_sorted(sorted, 90.0);

  // Robust MAD: deviation about the mean of values in [P10, P90].
  double rsum = 0.0;
  std::size_t rn = 0;
  for (double v : vals) {
    if (v >= p10 && v <= p90) {
      rsum += v;
      ++rn;
    }
  }
  double rmad = 0.0;
  if (rn > 0) {
    const double rmean = rsum / static_cast<double>(rn);
    for (double v : vals) {
      if (v >= p10 && v <= p90) rmad += std::abs(v - rmean);
    }
    rmad /= static_cast<double>(rn);
  }

  // Histogram over discretized levels for entropy/uniformity.
  std::vector<double> hist(disc.n_levels, 0.0);
  for (std::size_t i : disc.roi_indices) hist[disc.levels[i] - 1] += 1.0;
  double entropy = 0.0, uniformity = 0.0;
  for (double c : hist) {
    if (c == 0.0) continue;
    const double p = c / nd;
    entropy -= p * log2_(p);
    uniformity += p * p;
  }

  // Degenerate-region convention: skewness and kurtosis of a constant ROI
  // are reported as 0.
  const double skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  const double kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;

  const double voxel_volume = map.spacing[0] * map.spacing[1] * map.spacing[2];

  NamedFeatures out;
  out.names = prefixed("firstorder",
                       {"Energy", "TotalEnergy", "Entropy", "Minimum",
                        "Percentile10", "Percentile90", "Maximum", "Mean",
                        "Median", "InterquartileRange", "Range",
                        "MeanAbsoluteDeviation", "RobustMeanAbsoluteDeviation",
                        "RootMeanSquared", "Skewness", "Kurtosis", "Variance",
                        "Uniformity"});
  out.values = {energy,
                voxel_volume * energy,
                entropy,
                mn,
                p10,
                p90,
                mx,
                mean,
                median,
                p75 - p25,
                mx - mn,
                mad,
                rmad,
                std::sqrt(energy / nd),
                skewness,
                kurtosis,
                m2,
                uniformity};
  return out;
}

namespace {

struct GlcmStats {
  // Features for one direction's symmetric normalized matrix.
  std::array<double, 24> f{};
};

// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    }
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = a[i * n + i];
  return eig;
}

GlcmStats glcm_direction_features(const std::vector<double>& p, int ng) {
  GlcmStats st;
  const auto P = [&](int i, int j) { return p[(i - 1) * ng + (j - 1)]; };

  std::vector<double> px(ng, 0.0);
  for (int i = 1; i <= ng; ++i) {
    for (int j = 1; j <= ng; ++j) px[i - 1] += P(i, j);
  }
  double mu = 0.0;
  for (int i = 1; i <= ng; ++i) mu += i * px[i - 1];
  double sigma2 = 0.0;
  for (int i = 1; i <= ng; ++i) sigma2 += (i - mu) * (i - mu) * px[i - 1];
  const double sigma = std::sqrt(sigma2);

  std::vector<double> pxy_sum(2 * ng + 1, 0.0);   // index k = i+j
  std::vector<double> pxy_diff(ng, 0.0);          // index k = |i-j|
  for (int i = 1; i <= ng; ++i) {
    for (int j = 1; j <= ng; ++j) {
      pxy_sum[i + j] += P(i, j);
      pxy_diff[std::abs(i - j)] += P(i, j);
    }
  }

  double autoc = 0.0, prominence = 0.0, shade = 0.0, tendency = 0.0;
  double contrast = 0.0, corr_num = 0.0, id = 0.0, idm = 0.0, idmn = 0.0;
  double idn = 0.0, inv_var = 0.0, joint_energy = 0.0, joint_entropy = 0.0;
  double max_prob = 0.0, sum_squares = 0.0, hxy1 = 0.0, hxy2 = 0.0;
  const double ng2 = static_cast<double>(ng) * ng;
  for (int i = 1; i <= ng; ++i) {
    for (int j = 1; j <= ng; ++j) {
      const double pij = P(i, j);
      const double s = i + j - 2.0 * mu;
      const double d2 = (i - j) * (i - j);
      if (pij > 0.0) {
        joint_entropy -= pij * log2_(pij);
        const double pp = px[i - 1] * px[j - 1];
        if (pp > 0.0) hxy1 -= pij * log2_(pp);
      }
      autoc += i * j * pij;
      prominence += s * s * s * s * pij;
      shade += s * s * s * pij;
      tendency += s * s * pij;
      contrast += d2 * pij;
      corr_num += (i - mu) * (j - mu) * pij;
      id += pij / (1.0 + std::abs(i - j));
      idm += pij / (1.0 + d2);
      idmn += pij / (1.0 + d2 / ng2);
      idn += pij / (1.0 + std::abs(i - j) / static_cast<double>(ng));
      if (i != j) inv_var += pij / d2;
      joint_energy += pij * pij;
      max_prob = std::max(max_prob, pij);
      sum_squares += (i - mu) * (i - mu) * pij;
      const double pp = px[i - 1] * px[j - 1];
      if (pp > 0.0) hxy2 -= pp * log2_(pp);
    }
  }

  double hx = 0.0;
  for (int i = 1; i <= ng; ++i) {
    if (px[i - 1] > 0.0) hx -= px[i - 1] * log2_(px[i - 1]);
  }

  double diff_avg = 0.0, diff_entropy = 0.0;
  for (int k = 0; k < ng; ++k) {
    diff_avg += k * pxy_diff[k];
    if (pxy_diff[k] > 0.0) diff_entropy -= pxy_diff[k] * log2_(pxy_diff[k]);
  }
  double diff_var = 0.0;
  for (int k = 0; k < ng; ++k) {
    diff_var += (k - diff_avg) * (k - diff_avg) * pxy_diff[k];
  }

  double sum_avg = 0.0, sum_entropy = 0.0;
  for (int k = 2; k <= 2 * ng; ++k) {
    sum_avg += k * pxy_sum[k];
    if (pxy_sum[k] > 0.0) sum_entropy -= pxy_sum[k] * log2_(pxy_sum[k]);
  }

  // Constant-region conventions: correlation of a single-level matrix is 1;
  // Imc1 with zero entropies is 0.
  const double correlation = sigma2 > 0.0 ? corr_num / (sigma * sigma) : 1.0;
  const double imc1 = hx > 0.0 ? (joint_entropy - hxy1) / hx : 0.0;
  double imc2 = 1.0 - std::exp(-2.0 * (hxy2 - joint_entropy));
  imc2 = imc2 > 0.0 ? std::sqrt(imc2) : 0.0;

  double mcc = 1.0;
  {
    // MCC is the square root of the second-largest eigenvalue of
    // Q(i,j) = sum_k p(i,k)p(j,k)/(p_x(i)p_x(k)). Q is similar to S^2 with
    // the symmetric S(i,j) = p(i,j)/sqrt(p_x(i)p_x(j)), so MCC equals the
    // second-largest |eigenvalue| of S. Restricted to present levels.
    std::vector<int> present;
    for (int i = 0; i < ng; ++i) {
      if (px[i] > 0.0) present.push_back(i);
    }
    const int m = static_cast<int>(present.size());
    if (m >= 2) {
      std::vector<double> s(static_cast<std::size_t>(m) * m, 0.0);
      for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
          s[a * m + b] = P(present[a] + 1, present[b] + 1) /
                         std::sqrt(px[present[a]] * px[present[b]]);
        }
      }
      std::vector<double> eig = jacobi_eigenvalues(std::move(s), m);
      for (double& e : eig) e = std::abs(e);
      std::sort(eig.begin(), eig.end(), std::greater<>());
      mcc = std::min(eig[1], 1.0);
    }
  }

  st.f = {autoc,       mu,          prominence, shade,     tendency,
          contrast,    correlation, diff_avg,   diff_entropy, diff_var,
          joint_energy, joint_entropy, imc1,    imc2,      idm,
          mcc,         idmn,        id,         idn,       inv_var,
          max_prob,    sum_avg,     sum_entropy, sum_squares};
  return st;
}

}  // namespace

NamedFeatures glcm_features(const DiscretizedROI& disc) {
  const int ng = disc.n_levels;
  if (ng < 1) throw ValidationError("glcm: no gray levels");
  const Dims& dims = disc.dims;

  std::array<double, 24> acc{};
  int valid_directions = 0;

  for (const Coord& dir : texture_directions()) {
    std::vector<double> mat(static_cast<std::size_t>(ng) * ng, 0.0);
    double pairs = 0.0;
    for (std::size_t idx : disc.roi_indices) {
      const int lvl = disc.levels[idx];
      const int x = static_cast<int>(idx % dims.nx);
      const int y = static_cast<int>((idx / dims.nx) % dims.ny);
      const int z = static_cast<int>(idx / (static_cast<std::size_t>(dims.nx) * dims.ny));
      const int nx = x + dir.x, ny = y + dir.y, nz = z + dir.z;
      if (!dims.contains(nx, ny, nz)) continue;
      const int nlvl = disc.levels[dims.index(nx, ny, nz)];
      if (nlvl == 0) continue;
      // Symmetric accumulation.
      mat[(lvl - 1) * ng + (nlvl - 1)] += 1.0;
      mat[(nlvl - 1) * ng + (lvl - 1)] += 1.0;
      pairs += 2.0;
    }
    if (pairs == 0.0) continue;
    for (double& v : mat) v /= pairs;
    const GlcmStats st = glcm_direction_features(mat, ng);
    for (int k = 0; k < 24; ++k) acc[k] += st.f[k];
    ++valid_directions;
  }

  if (valid_directions == 0) {
    throw FeatureUndefinedError("glcm: no voxel pair in any direction");
  }

  NamedFeatures out;
  out.names = prefixed(
      "glcm", {"Autocorrelation", "JointAverage", "ClusterProminence",
               "ClusterShade", "ClusterTendency", "Contrast", "Correlation",
               "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance",
               "JointEnergy", "JointEntropy", "Imc1", "Imc2", "Idm", "MCC",
               "Idmn", "Id", "Idn", "InverseVariance", "MaximumProbability",
               "SumAverage", "SumEntropy", "SumSquares"});
  out.values.resize(24);
  for (int k = 0; k < 24; ++k) {
    out.values[k] = acc[k] / static_cast<double>(valid_directions);
  }
  return out;
}

namespace {

// Shared "level x size" feature block used by GLRLM/GLSZM/GLDM. The matrix is
// a map (level, size) -> count; Np is the ROI voxel count.
struct LevelSizeFeatures {
  double small_emph, large_emph, gl_nonuniformity, gl_nonuniformity_norm;
  double size_nonuniformity, size_nonuniformity_norm, percentage;
  double gl_variance, size_variance, entropy;
  double low_gl, high_gl, small_low, small_high, large_low, large_high;
};

LevelSizeFeatures level_size_features(const std::map<std::pair<int, int>, double>& mat,
                                      double np) {
  double total = 0.0;
  std::map<int, double> by_level, by_size;
  for (const auto& [key, c] : mat) {
    total += c;
    by_level[key.first] += c;
    by_size[key.second] += c;
  }

  LevelSizeFeatures f{};
  double mu_i = 0.0, mu_j = 0.0;
  for (const auto& [key, c] : mat) {
    const double p = c / total;
    mu_i += key.first * p;
    mu_j += key.second * p;
  }
  for (const auto& [key, c] : mat) {
    const auto [i, j] = key;
    const double p = c / total;
    const double i2 = static_cast<double>(i) * i;
    const double j2 = static_cast<double>(j) * j;
    f.small_emph += c / j2;
    f.large_emph += c * j2;
    f.low_gl += c / i2;
    f.high_gl += c * i2;
    f.small_low += c / (i2 * j2);
    f.small_high += c * i2 / j2;
    f.large_low += c * j2 / i2;
    f.large_high += c * i2 * j2;
    f.gl_variance += p * (i - mu_i) * (i - mu_i);
    f.size_variance += p * (j - mu_j) * (j - mu_j);
    f.entropy -= p * log2_(p);
  }
  for (const auto& [lvl, c] : by_level) f.gl_nonuniformity += c * c;
  for (const auto& [sz, c] : by_size) f.size_nonuniformity += c * c;

  f.small_emph /= total;
  f.large_emph /= total;
  f.low_gl /= total;
  f.high_gl /= total;
  f.small_low /= total;
  f.small_high /= total;
  f.large_low /= total;
  f.large_high /= total;
  f.gl_nonuniformity /= total;
  f.gl_nonuniformity_norm = f.gl_nonuniformity / total;
  f.size_nonuniformity /= total;
  f.size_nonuniformity_norm = f.size_nonuniformity / total;
  f.percentage = total / np;
  return f;
}

}  // namespace

NamedFeatures glrlm_features(const DiscretizedROI& disc) {
  if (disc.roi_indices.empty()) throw ValidationError("glrlm: empty ROI");
  const Dims& dims = disc.dims;
  const double np = static_cast<double>(disc.roi_indices.size());

  std::array<double, 16> acc{};
  int n_dirs = 0;
  for (const Coord& dir : texture_directions()) {
    std::map<std::pair<int, int>, double> runs;
    for (std::size_t idx : disc.roi_indices) {
      const int lvl = disc.levels[idx];
      const int x = static_cast<int>(idx % dims.nx);
      const int y = static_cast<int>((idx / dims.nx) % dims.ny);
      const int z = static_cast<int>(idx / (static_cast<std::size_t>(dims.nx) * dims.ny));
      // Run start: predecessor along the direction is absent or different.
      const int px = x - dir.x, py = y - dir.y, pz = z - dir.z;
      if (dims.contains(px, py, pz) &&
          disc.levels[dims.index(px, py, pz)] == lvl) {
        continue;
      }
      int len = 1;
      int cx = x + dir.x, cy = y + dir.y, cz = z + dir.z;
      while (dims.contains(cx, cy, cz) &&
             disc.levels[dims.index(cx, cy, cz)] == lvl) {
        ++len;
        cx += dir.x;
        cy += dir.y;
        cz += dir.z;
      }
      runs[{lvl, len}] += 1.0;
    }
    const LevelSizeFeatures f = level_size_features(runs, np);
    const std::array<double, 16> v = {
        f.small_emph, f.large_emph, f.gl_nonuniformity,
        f.gl_nonuniformity_norm, f.size_nonuniformity,
        f.size_nonuniformity_norm, f.percentage, f.gl_variance,
        f.size_variance, f.entropy, f.low_gl, f.high_gl,
        f.small_low, f.small_high, f.large_low, f.large_high};
    for (int k = 0; k < 16; ++k) acc[k] += v[k];
    ++n_dirs;
  }

  NamedFeatures out;
  out.names = prefixed(
      "glrlm",
      {"ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity",
       "GrayLevelNonUniformityNormalized", "RunLengthNonUniformity",
       "RunLengthNonUniformityNormalized", "RunPercentage",
       "GrayLevelVariance", "RunVariance", "RunEntropy",
       "LowGrayLevelRunEmphasis", "HighGrayLevelRunEmphasis",
       "ShortRunLowGrayLevelEmphasis", "ShortRunHighGrayLevelEmphasis",
       "LongRunLowGrayLevelEmphasis", "LongRunHighGrayLevelEmphasis"});
  out.values.resize(16);
  for (int k = 0; k < 16; ++k) out.values[k] = acc[k] / n_dirs;
  return out;
}

NamedFeatures glszm_features(const DiscretizedROI& disc) {
  if (disc.roi_indices.empty()) throw ValidationError("glszm: empty ROI");
  const Dims& dims = disc.dims;
  const double np = static_cast<double>(disc.roi_indices.size());

  // Zones: 26-connected components of equal-level ROI voxels.
  std::vector<char> visited(disc.levels.size(), 0);
  std::map<std::pair<int, int>, double> zones;
  for (std::size_t start : disc.roi_indices) {
    if (visited[start]) continue;
    const int lvl = disc.levels[start];
    int size = 0;
    std::deque<std::size_t> queue{start};
    visited[start] = 1;
    while (!queue.empty()) {
      const std::size_t idx = queue.front();
      queue.pop_front();
      ++size;
      const int x = static_cast<int>(idx % dims.nx);
      const int y = static_cast<int>((idx / dims.nx) % dims.ny);
      const int z = static_cast<int>(idx / (static_cast<std::size_t>(dims.nx) * dims.ny));
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const int nx = x + dx, ny = y + dy, nz = z + dz;
            if (!dims.contains(nx, ny, nz)) continue;
            const std::size_t ni = dims.index(nx, ny, nz);
            if (!visited[ni] && disc.levels[ni] == lvl) {
              visited[ni] = 1;
              queue.push_back(ni);
            }
          }
        }
      }
    }
    zones[{lvl, size}] += 1.0;
  }

  const LevelSizeFeatures f = level_size_features(zones, np);
  NamedFeatures out;
  out.names = prefixed(
      "glszm",
      {"SmallAreaEmphasis", "LargeAreaEmphasis", "GrayLevelNonUniformity",
       "GrayLevelNonUniformityNormalized", "SizeZoneNonUniformity",
       "SizeZoneNonUniformityNormalized", "ZonePercentage",
       "GrayLevelVariance", "ZoneVariance", "ZoneEntropy",
       "LowGrayLevelZoneEmphasis", "HighGrayLevelZoneEmphasis",
       "SmallAreaLowGrayLevelEmphasis", "SmallAreaHighGrayLevelEmphasis",
       "LargeAreaLowGrayLevelEmphasis", "LargeAreaHighGrayLevelEmphasis"});
  out.values = {f.small_emph, f.large_emph, f.gl_nonuniformity,
                f.gl_nonuniformity_norm, f.size_nonuniformity,
                f.size_nonuniformity_norm, f.percentage, f.gl_variance,
                f.size_variance, f.entropy, f.low_gl, f.high_gl,
                f.small_low, f.small_high, f.large_low, f.large_high};
  return out;
}

NamedFeatures gldm_features(const DiscretizedROI& disc) {
  if (disc.roi_indices.empty()) throw ValidationError("gldm: empty ROI");
  const Dims& dims = disc.dims;
  const double np = static_cast<double>(disc.roi_indices.size());

  // Dependence of a voxel: 1 (itself) + the number of 26-neighbors inside the
  // ROI with the same level (alpha = 0).
  std::map<std::pair<int, int>, double> deps;
  for (std::size_t idx : disc.roi_indices) {
    const int lvl = disc.levels[idx];
    const int x = static_cast<int>(idx % dims.nx);
    const int y = static_cast<int>((idx / dims.nx) % dims.ny);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(dims.nx) * dims.ny));
    int dep = 1;
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (!dims.contains(nx, ny, nz)) continue;
          if (disc.levels[dims.index(nx, ny, nz)] == lvl) ++dep;
        }
      }
    }
    deps[{lvl, dep}] += 1.0;
  }

  const LevelSizeFeatures f = level_size_features(deps, np);
  NamedFeatures out;
  out.names = prefixed(
      "gldm",
      {"SmallDependenceEmphasis", "LargeDependenceEmphasis",
       "GrayLevelNonUniformity", "DependenceNonUniformity",
       "DependenceNonUniformityNormalized", "GrayLevelVariance",
       "DependenceVariance", "DependenceEntropy", "LowGrayLevelEmphasis",
       "HighGrayLevelEmphasis", "SmallDependenceLowGrayLevelEmphasis",
       "SmallDependenceHighGrayLevelEmphasis",
       "LargeDependenceLowGrayLevelEmphasis",
       "LargeDependenceHighGrayLevelEmphasis"});
  out.values = {f.small_emph, f.large_emph, f.gl_nonuniformity,
                f.size_nonuniformity, f.size_nonuniformity_norm,
                f.gl_variance, f.size_variance, f.entropy, f.low_gl,
                f.high_gl, f.small_low, f.small_high, f.large_low,
                f.large_high};
  return out;
}

NamedFeatures ngtdm_features(const DiscretizedROI& disc) {
  if (disc.roi_indices.empty()) throw ValidationError("ngtdm: empty ROI");
  const Dims& dims = disc.dims;
  const int ng = disc.n_levels;

  // Per level: count of valid voxels n_i and absolute-difference sum s_i.
  // A voxel is valid when it has at least one 26-neighbor inside the ROI.
  std::vector<double> n_i(ng + 1, 0.0), s_i(ng + 1, 0.0);
  double n_valid = 0.0;
  for (std::size_t idx : disc.roi_indices) {
    const int lvl = disc.levels[idx];
    const int x = static_cast<int>(idx % dims.nx);
    const int y = static_cast<int>((idx / dims.nx) % dims.ny);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(dims.nx) * dims.ny));
    double sum = 0.0;
    int count = 0;
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (!dims.contains(nx, ny, nz)) continue;
          const int nlvl = disc.levels[dims.index(nx, ny, nz)];
          if (nlvl == 0) continue;
          sum += nlvl;
          ++count;
        }
      }
    }
    if (count == 0) continue;
    n_i[lvl] += 1.0;
    s_i[lvl] += std::abs(lvl - sum / count);
    n_valid += 1.0;
  }
  if (n_valid == 0.0) {
    throw FeatureUndefinedError("ngtdm: no voxel has a valid neighborhood");
  }

  std::vector<double> p_i(ng + 1, 0.0);
  int n_present = 0;
  double sum_ps = 0.0, sum_s = 0.0;
  for (int i = 1; i <= ng; ++i) {
    p_i[i] = n_i[i] / n_valid;
    if (p_i[i] > 0.0) ++n_present;
    sum_ps += p_i[i] * s_i[i];
    sum_s += s_i[i];
  }

  // Coarseness: reciprocal of sum p_i*s_i; an all-flat region would divide by
  // zero, reported with the customary cap.
  const double coarseness = sum_ps > 0.0 ? 1.0 / sum_ps : 1e6;

  double contrast = 0.0;
  if (n_present > 1) {
    double pair_term = 0.0;
    for (int i = 1; i <= ng; ++i) {
      for (int j = 1; j <= ng; ++j) {
        pair_term += p_i[i] * p_i[j] * (i - j) * (i - j);
      }
    }
    contrast = pair_term / (static_cast<double>(n_present) * (n_present - 1)) *
               (sum_s / n_valid);
  }

  double busy_denom = 0.0, complexity = 0.0, strength_num = 0.0;
  for (int i = 1; i <= ng; ++i) {
    if (p_i[i] == 0.0) continue;
    for (int j = 1; j <= ng; ++j) {
      if (p_i[j] == 0.0) continue;
      busy_denom += std::abs(i * p_i[i] - j * p_i[j]);
      complexity += std::abs(i - j) * (p_i[i] * s_i[i] + p_i[j] * s_i[j]) /
                    (p_i[i] + p_i[j]);
      strength_num += (p_i[i] + p_i[j]) * (i - j) * (i - j);
    }
  }
  const double busyness = busy_denom > 0.0 ? sum_ps / busy_denom : 0.0;
  complexity /= n_valid;
  const double strength = sum_s > 0.0 ? strength_num / sum_s : 0.0;

  NamedFeatures out;
  out.names = prefixed("ngtdm", {"Coarseness", "Contrast", "Busyness",
                                 "Complexity", "Strength"});
  out.values = {coarseness, contrast, busyness, complexity, strength};
  return out;
}

const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = [] {
    // Build once from the family functions applied to a tiny fixture so the
    // canonical order is defined in exactly one place.
    Volume3D v({2, 2, 2});
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      v.data[i] = static_cast<double>(i);
    }
    BinaryMask roi(v.dims, true);
    DiscretizedROI disc = discretize(v, roi, 1.0);
    std::array<std::string, kFeatureCount> out;
    std::size_t k = 0;
    for (const NamedFeatures& f :
         {first_order(v, roi, 1.0), glcm_features(disc), glrlm_features(disc),
          glszm_features(disc), gldm_features(disc), ngtdm_features(disc)}) {
      for (const std::string& n : f.names) out[k++] = n;
    }
    if (k != kFeatureCount) throw Error("feature name list is not 93 entries");
    return out;
  }();
  return names;
}

ExtractionOutcome extract_all(const SaliencyMap& saliency,
                              const LesionInstance& lesion,
                              const ExtractionOptions& opts) {
  ExtractionOutcome out;
  out.vector.lesion_id = lesion.id;

  const Volume3D& raw = saliency.map;
  if (lesion.voxels.empty()) {
    throw ValidationError("extract_all: empty lesion");
  }
  for (const Coord& v : lesion.voxels) {
    if (!raw.dims.contains(v.x, v.y, v.z)) {
      throw ValidationError("extract_all: lesion voxel outside saliency map");
    }
  }

  try {
    Volume3D map = opts.standardize_map ? zscore(raw) : raw;
    BinaryMask roi = dilate(lesion.to_mask(raw.dims), opts.dilation_radius,
                            opts.dilation_structuring);

    DiscretizedROI disc = discretize(map, roi, opts.bin_width);
    out.n_levels = disc.n_levels;
    out.low_level_warning = disc.n_levels < opts.min_levels_warning;

    std::size_t k = 0;
    for (const NamedFeatures& f :
         {first_order(map, roi, opts.bin_width), glcm_features(disc),
          glrlm_features(disc), glszm_features(disc), gldm_features(disc),
          ngtdm_features(disc)}) {
      for (double v : f.values) out.vector.values[k++] = v;
    }
    if (k != kFeatureCount) throw Error("extract_all: feature count drift");
    for (double v : out.vector.values) {
      if (!std::isfinite(v)) {
        throw FeatureUndefinedError("extract_all: non-finite feature value");
      }
    }
  } catch (const DegenerateInputError& e) {
    out.vector.complete = false;
    out.vector.exclusion_reason = e.what();
  } catch (const FeatureUndefinedError& e) {
    out.vector.complete = false;
    out.vector.exclusion_reason =
        std::string(e.what()) + " (lesion " + std::to_string(lesion.id) + ")";
  }
  return out;
}

std::string features_csv(const std::vector<FeatureVector>& rows) {
  std::ostringstream os;
  os << "patient,lesion_id,group";
  for (const std::string& n : feature_names()) os << "," << n;
  os << "\n";
  char buf[64];
  for (const FeatureVector& r : rows) {
    os << r.patient << "," << r.lesion_id << "," << r.group;
    for (double v : r.values) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << "," << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::vector<FeatureVector> parse_features_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("features CSV: empty input");

  // Validate the header against the frozen name list.
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    if (cell != "patient") throw FormatError("features CSV: bad header");
    std::getline(hs, cell, ',');
    std::getline(hs, cell, ',');
    for (const std::string& n : feature_names()) {
      if (!std::getline(hs, cell, ',') || cell != n) {
        throw FormatError("features CSV: header does not match the frozen "
                          "93-feature name list");
      }
    }
  }

  std::vector<FeatureVector> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FeatureVector r;
    std::string cell;
    std::getline(ls, r.patient, ',');
    std::getline(ls, cell, ',');
    r.lesion_id = std::stoi(cell);
    std::getline(ls, r.group, ',');
    for (int k = 0; k < kFeatureCount; ++k) {
      if (!std::getline(ls, cell, ',')) {
        throw FormatError("features CSV: short row");
      }
      r.values[k] = std::stod(cell);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace salref
