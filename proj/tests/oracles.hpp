// Independent reference implementations used only by tests. Each oracle is a
// deliberately naive transcription of the published definitions: dense
// matrices, triple loops, no shared helpers with the library, and (for the
// GLCM eigenvalue) a different algorithm than production. Slow is fine here.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "salref/refine.hpp"
#include "salref/rng.hpp"
#include "salref/saliency.hpp"
#include "salref/scorer.hpp"
#include "salref/volume.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Finite differences

inline double fd_gradient(const salref::Scorer& scorer,
                          salref::VolumeStack input, salref::Coord v_out,
                          int channel, salref::Coord v_in, double h = 1e-4) {
  double& cell = input.at(channel, v_in.x, v_in.y, v_in.z);
  const double orig = cell;
  cell = orig + h;
  const double fp = scorer.forward(input).at(v_out.x, v_out.y, v_out.z);
  cell = orig - h;
  const double fm = scorer.forward(input).at(v_out.x, v_out.y, v_out.z);
  return (fp - fm) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// Instance saliency: materialize all N * |omega| gradient volumes and reduce
// them with an explicit pass over every voxel.

inline salref::Volume3D naive_instance_saliency(
    const salref::Scorer& scorer, const salref::VolumeStack& input,
    const salref::LesionInstance& omega, const salref::SaliencyConfig& cfg) {
  const salref::Dims dims = input.dims;
  const std::size_t n = dims.count();
  const int reps = cfg.noise_sigma == 0.0 ? 1 : cfg.n_samples;

  salref::Rng rng(cfg.seed);
  std::vector<double> acc(n, 0.0);
  for (int rep = 0; rep < reps; ++rep) {
    salref::VolumeStack noisy = input;
    if (cfg.noise_sigma > 0.0) {
      for (double& v : noisy.data) v += rng.normal(0.0, cfg.noise_sigma);
    }
    std::vector<salref::Volume3D> grads;
    for (const salref::Coord& v : omega.voxels) {
      grads.push_back(scorer.input_gradient(noisy, v, cfg.channel));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double best = 0.0, best_abs = 0.0;
      for (const salref::Volume3D& g : grads) {
        if (std::abs(g.data[i]) > best_abs) {
          best_abs = std::abs(g.data[i]);
          best = g.data[i];
        }
      }
      acc[i] += best;
    }
  }
  salref::Volume3D out(dims);
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = reps == 1 ? acc[i] : acc[i] / reps;
  }
  return out;
}

// ---------------------------------------------------------------------------
// L1 logistic regression: ISTA proximal gradient on the identical objective,
// fixed step from a power-iteration Lipschitz bound.

struct ProxResult {
  std::vector<double> w;
  double bias = 0.0;
  double objective = 0.0;
  long iterations = 0;
};

inline double prox_objective(const salref::Matrix& x, const std::vector<int>& y,
                             double lambda, salref::ClassWeights cw,
                             const std::vector<double>& w, double bias) {
  double obj = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = bias;
    for (std::size_t j = 0; j < x.cols; ++j) m += w[j] * x.at(i, j);
    const double t = y[i] == 1 ? 1.0 : -1.0;
    const double z = -t * m;
    // log(1 + e^z), overflow-safe
    const double loss = z > 0.0 ? z + std::log1p(std::exp(-z))
                                : std::log1p(std::exp(z));
    obj += (y[i] == 1 ? cw.tp : cw.fp) * loss;
  }
  for (double v : w) obj += lambda * std::abs(v);
  return obj;
}

inline ProxResult prox_lr(const salref::Matrix& x, const std::vector<int>& y,
                          double lambda, salref::ClassWeights cw,
                          double tol = 1e-10, long max_iter = 2000000) {
  const std::size_t nr = x.rows, nc = x.cols;
  const std::size_t d = nc + 1;  // bias as an extra all-ones column

  // Lipschitz constant of the smooth part: 0.25 * sigma_max(A)^2 with
  // A_i = sqrt(cw_i) * [x_i, 1]; sigma_max by power iteration.
  std::vector<double> v(d, 1.0), av(nr), atav(d);
  double sigma2 = 0.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t i = 0; i < nr; ++i) {
      double s = v[nc];
      for (std::size_t j = 0; j < nc; ++j) s += v[j] * x.at(i, j);
      av[i] = std::sqrt(y[i] == 1 ? cw.tp : cw.fp) * s;
    }
    std::fill(atav.begin(), atav.end(), 0.0);
    for (std::size_t i = 0; i < nr; ++i) {
      const double c = std::sqrt(y[i] == 1 ? cw.tp : cw.fp) * av[i];
      for (std::size_t j = 0; j < nc; ++j) atav[j] += c * x.at(i, j);
      atav[nc] += c;
    }
    double norm = 0.0;
    for (double a : atav) norm += a * a;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    sigma2 = norm;
    for (std::size_t j = 0; j < d; ++j) v[j] = atav[j] / norm;
  }
  const double L = std::max(0.25 * sigma2, 1e-12);
  const double step = 1.0 / L;

  ProxResult r;
  r.w.assign(nc, 0.0);
  std::vector<double> grad(d);
  double prev_obj = prox_objective(x, y, lambda, cw, r.w, r.bias);
  for (long it = 0; it < max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < nr; ++i) {
      double m = r.bias;
      for (std::size_t j = 0; j < nc; ++j) m += r.w[j] * x.at(i, j);
      const double t = y[i] == 1 ? 1.0 : -1.0;
      const double s = 1.0 / (1.0 + std::exp(t * m));  // sigmoid(-t m)
      const double c = -(y[i] == 1 ? cw.tp : cw.fp) * t * s;
      for (std::size_t j = 0; j < nc; ++j) grad[j] += c * x.at(i, j);
      grad[nc] += c;
    }
    double delta = 0.0;
    for (std::size_t j = 0; j < nc; ++j) {
      const double u = r.w[j] - step * grad[j];
      const double thr = step * lambda;
      const double nw = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
      delta = std::max(delta, std::abs(nw - r.w[j]));
      r.w[j] = nw;
    }
    const double nb = r.bias - step * grad[nc];
    delta = std::max(delta, std::abs(nb - r.bias));
    r.bias = nb;
    r.iterations = it + 1;
    if (delta < tol) {
      const double obj = prox_objective(x, y, lambda, cw, r.w, r.bias);
      if (std::abs(prev_obj - obj) < tol) {
        prev_obj = obj;
        break;
      }
      prev_obj = obj;
    }
  }
  r.objective = prox_objective(x, y, lambda, cw, r.w, r.bias);
  return r;
}

// ---------------------------------------------------------------------------
// Mann-Whitney helpers

inline double midrank_u(const std::vector<double>& a,
                        const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> rank(pooled.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double ra = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) ra += rank[k];
  const double na = static_cast<double>(a.size());
  return ra - na * (na + 1.0) / 2.0;
}

// Exact two-sided p by enumerating every C(n, na) assignment of the pooled
// values to group a: p = P(|U - mu| >= |U_obs - mu|).
inline double mw_exact_p(const std::vector<double>& a,
                         const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), na = a.size();
  const double mu = static_cast<double>(na) * (n - na) / 2.0;
  const double target = std::abs(midrank_u(a, b) - mu) - 1e-12;

  std::vector<std::size_t> pick(na);
  std::iota(pick.begin(), pick.end(), 0);
  long total = 0, hits = 0;
  for (;;) {
    std::vector<double> ga, gb;
    std::size_t pi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pi < na && pick[pi] == i) {
        ga.push_back(pooled[i]);
        ++pi;
      } else {
        gb.push_back(pooled[i]);
      }
    }
    ++total;
    if (std::abs(midrank_u(ga, gb) - mu) >= target) ++hits;

    // next combination
    std::size_t k = na;
    while (k > 0 && pick[k - 1] == n - na + k - 1) --k;
    if (k == 0) break;
    ++pick[k - 1];
    for (std::size_t j = k; j < na; ++j) pick[j] = pick[j - 1] + 1;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace oracle
