#include "salref/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace salref {

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + exp(-m)) without overflow.
inline double log1pexp_neg(double m) {
  if (m >= 0.0) return std::log1p(std::exp(-m));
  return -m + std::log1p(std::exp(m));
}

}  // namespace

bool Standardizer::is_dropped(std::size_t col) const {
  return std::find(dropped.begin(), dropped.end(), static_cast<int>(col)) !=
         dropped.end();
}

Standardizer fit_standardizer(const Matrix& x) {
  if (x.rows < 2) throw ValidationError("fit_standardizer: need >= 2 rows");
  Standardizer s;
  s.mean.resize(x.cols);
  s.std.resize(x.cols);
  const double n = static_cast<double>(x.rows);
  for (std::size_t c = 0; c < x.cols; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) sum += x.at(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double d = x.at(r, c) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);  // population std
    s.mean[c] = mean;
    s.std[c] = sd;
    if (sd == 0.0) s.dropped.push_back(static_cast<int>(c));
  }
  return s;
}

Matrix apply_standardizer(const Standardizer& s, const Matrix& x) {
  if (x.cols != s.mean.size()) {
    throw ValidationError("apply_standardizer: column count mismatch");
  }
  Matrix out(x.rows, x.cols);
  for (std::size_t c = 0; c < x.cols; ++c) {
    const bool drop = s.std[c] == 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      out.at(r, c) = drop ? 0.0 : (x.at(r, c) - s.mean[c]) / s.std[c];
    }
  }
  return out;
}

double lr_objective(const Matrix& x, const std::vector<int>& y, double lambda,
                    ClassWeights cw, const std::vector<double>& w,
                    double bias) {
  double obj = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    double z = bias;
    for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * x.at(r, c);
    const double t = y[r] == 1 ? 1.0 : -1.0;
    const double weight = y[r] == 1 ? cw.tp : cw.fp;
    obj += weight * log1pexp_neg(t * z);
  }
  for (double wc : w) obj += lambda * std::abs(wc);
  return obj;
}

LRModel train_lr(const Matrix& x, const std::vector<int>& y, double lambda,
                 ClassWeights class_weights, int max_iter, double tol) {
  if (y.size() != x.rows) throw ValidationError("train_lr: label count mismatch");
  const bool has_pos = std::any_of(y.begin(), y.end(), [](int v) { return v == 1; });
  const bool has_neg = std::any_of(y.begin(), y.end(), [](int v) { return v == 0; });
  if (!has_pos || !has_neg) {
    throw ValidationError("train_lr: both classes must be present");
  }
  if (lambda < 0.0) throw ValidationError("train_lr: lambda must be >= 0");

  const std::size_t n = x.rows, d = x.cols;
  std::vector<double> w(d, 0.0);
  double bias = 0.0;

  std::vector<double> t(n), cw(n);
  for (std::size_t r = 0; r < n; ++r) {
    t[r] = y[r] == 1 ? 1.0 : -1.0;
    cw[r] = y[r] == 1 ? class_weights.tp : class_weights.fp;
  }

  // Margins m_i = t_i * (w.x_i + b), kept incrementally.
  std::vector<double> margin(n, 0.0);

  auto smooth_loss = [&]() {
    double l = 0.0;
    for (std::size_t r = 0; r < n; ++r) l += cw[r] * log1pexp_neg(margin[r]);
    return l;
  };

  // Backtracking on the true objective; returns the accepted step for
  // coordinate c (or the bias when c == d).
  auto coordinate_step = [&](std::size_t c) -> double {
    double g = 0.0, h = 1e-12;
    for (std::size_t r = 0; r < n; ++r) {
      const double xc = c == d ? 1.0 : x.at(r, c);
      if (xc == 0.0) continue;
      const double s = sigmoid(-margin[r]);  // d/dm log1pexp(-m) = -sigma(-m)
      g += cw[r] * (-t[r] * xc) * s;
      h += cw[r] * xc * xc * s * (1.0 - s);
    }

    double dstep;
    const double wc = c == d ? bias : w[c];
    if (c == d) {
      dstep = -g / h;  // unpenalized
    } else {
      // Soft-thresholded Newton direction for g*dw + h*dw^2/2 + lambda*|w+dw|.
      if (g + lambda <= h * wc) {
        dstep = -(g + lambda) / h;
      } else if (g - lambda >= h * wc) {
        dstep = -(g - lambda) / h;
      } else {
        dstep = -wc;
      }
    }
    if (dstep == 0.0) return 0.0;

    const double loss0 = smooth_loss();
    const double pen0 = c == d ? 0.0 : lambda * std::abs(wc);
    for (int bt = 0; bt < 40; ++bt) {
      double loss1 = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double xc = c == d ? 1.0 : x.at(r, c);
        loss1 += cw[r] * log1pexp_neg(margin[r] + t[r] * xc * dstep);
      }
      const double pen1 = c == d ? 0.0 : lambda * std::abs(wc + dstep);
      if (loss1 + pen1 <= loss0 + pen0 + 1e-15) {
        for (std::size_t r = 0; r < n; ++r) {
          const double xc = c == d ? 1.0 : x.at(r, c);
          margin[r] += t[r] * xc * dstep;
        }
        if (c == d) bias += dstep;
        else w[c] += dstep;
        return dstep;
      }
      dstep *= 0.5;
    }
    return 0.0;
  };

  LRModel model;
  model.lambda = lambda;
  model.class_weights = class_weights;

  int iter = 0;
  bool converged = false;
  for (; iter < max_iter; ++iter) {
    double max_update = 0.0;
    // Deterministic cyclic order: features ascending, then the bias.
    for (std::size_t c = 0; c <= d; ++c) {
      max_update = std::max(max_update, std::abs(coordinate_step(c)));
    }
    if (max_update < tol) {
      converged = true;
      break;
    }
  }

  model.weights = std::move(w);
  model.bias = bias;
  model.iterations_used = iter;
  model.converged = converged;
  model.final_objective =
      lr_objective(x, y, lambda, class_weights, model.weights, model.bias);
  return model;
}

double predict_proba(const LRModel& model, const std::vector<double>& x) {
  if (x.size() != model.weights.size()) {
    throw ValidationError("predict_proba: dimension mismatch");
  }
  double z = model.bias;
  const bool standardized = !model.standardizer.mean.empty();
  if (standardized && model.standardizer.mean.size() != x.size()) {
    throw ValidationError("predict_proba: standardizer dimension mismatch");
  }
  for (std::size_t c = 0; c < x.size(); ++c) {
    double v = x[c];
    if (standardized) {
      v = model.standardizer.std[c] == 0.0
              ? 0.0
              : (v - model.standardizer.mean[c]) / model.standardizer.std[c];
    }
    z += model.weights[c] * v;
  }
  return sigmoid(z);
}

std::vector<double> feature_importance(const LRModel& model) {
  double max_abs = 0.0;
  for (double w : model.weights) max_abs = std::max(max_abs, std::abs(w));
  if (max_abs == 0.0) {
    throw ValidationError("feature_importance: all weights are zero");
  }
  std::vector<double> out(model.weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = model.weights[i] / max_abs;
  }
  return out;
}

RefinedConfusion refine_predictions(const MatchResult& match,
                                    const std::vector<FeatureVector>& features,
                                    const LRModel& model, double threshold) {
  if (model.weights.empty()) {
    throw ValidationError("refine_predictions: missing model");
  }
  std::map<int, const FeatureVector*> by_id;
  for (const FeatureVector& f : features) by_id[f.lesion_id] = &f;

  auto keeps = [&](int pred_id, bool* excluded) -> bool {
    auto it = by_id.find(pred_id);
    if (it == by_id.end() || !it->second->complete) {
      *excluded = true;  // fail-open: never delete what we could not analyze
      return true;
    }
    *excluded = false;
    std::vector<double> x(it->second->values.begin(), it->second->values.end());
    return predict_proba(model, x) >= threshold;
  };

  RefinedConfusion rc;
  for (const auto& [pred_id, gt_ids] : match.tp) {
    bool excluded = false;
    if (keeps(pred_id, &excluded)) {
      ++rc.kept_tp;
      if (excluded) ++rc.excluded_kept;
    } else {
      ++rc.rejected_tp;
    }
  }
  for (int pred_id : match.fp) {
    bool excluded = false;
    if (keeps(pred_id, &excluded)) {
      ++rc.kept_fp;
      if (excluded) ++rc.excluded_kept;
    } else {
      ++rc.rejected_fp;
    }
  }
  rc.n_tp = rc.kept_tp;
  rc.n_fp = rc.kept_fp;
  rc.n_fn = match.n_fn + rc.rejected_tp;
  return rc;
}

namespace {

nlohmann::json standardizer_to_json(const Standardizer& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"dropped", s.dropped}};
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.dropped = j.at("dropped").get<std::vector<int>>();
  return s;
}

}  // namespace

void save_lr_model(const LRModel& model, const std::filesystem::path& path) {
  nlohmann::json j = {
      {"format", "salref-lr-model"},
      {"version", 1},
      {"weights", model.weights},
      {"bias", model.bias},
      {"lambda", model.lambda},
      {"class_weights", {{"tp", model.class_weights.tp}, {"fp", model.class_weights.fp}}},
      {"threshold", model.threshold},
      {"standardizer", standardizer_to_json(model.standardizer)},
      {"training", {{"iterations_used", model.iterations_used},
                    {"final_objective", model.final_objective},
                    {"converged", model.converged}}},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for write: " + path.string());
  out << j.dump(2) << "\n";
}

LRModel load_lr_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad model JSON in " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "salref-lr-model") {
    throw FormatError("not a model file: " + path.string());
  }
  LRModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.bias = j.at("bias").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.class_weights.tp = j.at("class_weights").at("tp").get<double>();
  m.class_weights.fp = j.at("class_weights").at("fp").get<double>();
  m.threshold = j.at("threshold").get<double>();
  m.standardizer = standardizer_from_json(j.at("standardizer"));
  m.iterations_used = j.at("training").at("iterations_used").get<int>();
  m.final_objective = j.at("training").at("final_objective").get<double>();
  m.converged = j.at("training").at("converged").get<bool>();
  return m;
}

}  // namespace salref
