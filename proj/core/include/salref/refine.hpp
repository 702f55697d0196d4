#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "salref/instances.hpp"
#include "salref/radiomics.hpp"

namespace salref {

// Row-major feature matrix, one row per lesion.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Per-feature training-set mean/std (population). Zero-variance columns are
// dropped: their transformed value is 0 and downstream weights stay 0.
struct Standardizer {
  std::vector<double> mean, std;
  std::vector<int> dropped;  // column indices

  bool is_dropped(std::size_t col) const;
};

Standardizer fit_standardizer(const Matrix& x);
Matrix apply_standardizer(const Standardizer& s, const Matrix& x);

struct ClassWeights {
  double tp = 0.29;  // applied to y = 1 rows
  double fp = 0.71;  // applied to y = 0 rows
};

struct LRModel {
  std::vector<double> weights;
  double bias = 0.0;
  double lambda = 1.0;
  ClassWeights class_weights;
  double threshold = 0.5;
  Standardizer standardizer;
  int iterations_used = 0;
  double final_objective = 0.0;
  bool converged = true;
};

// Minimizes sum_i cw(y_i) log(1 + exp(-t_i (w.x_i + b))) + lambda*||w||_1
// (t in {-1,+1}, bias unpenalized) by cyclic coordinate descent with a
// backtracking Newton step per coordinate. The objective is non-increasing
// across sweeps; stops when the largest coordinate update is below tol.
LRModel train_lr(const Matrix& x, const std::vector<int>& y, double lambda,
                 ClassWeights class_weights, int max_iter = 10000,
                 double tol = 1e-6);

double lr_objective(const Matrix& x, const std::vector<int>& y, double lambda,
                    ClassWeights cw, const std::vector<double>& w, double bias);

// sigmoid(w.x + b). When the model carries a fitted standardizer it is
// applied to x first.
double predict_proba(const LRModel& model, const std::vector<double>& x);

// Coefficients scaled by the maximum absolute weight; exactly one entry has
// absolute value 1. Throws on an all-zero weight vector.
std::vector<double> feature_importance(const LRModel& model);

struct RefinedConfusion {
  int kept_tp = 0, kept_fp = 0, rejected_tp = 0, rejected_fp = 0;
  int n_tp = 0, n_fp = 0, n_fn = 0;  // n_fn = original FN + rejected TP
  int excluded_kept = 0;  // fail-open: lesions without features, kept as-is
};

// An instance is kept iff predict_proba >= threshold. Lesions whose feature
// extraction failed (vector flagged incomplete, or no vector at all) are
// kept unchanged and counted in excluded_kept.
RefinedConfusion refine_predictions(const MatchResult& match,
                                    const std::vector<FeatureVector>& features,
                                    const LRModel& model, double threshold);

void save_lr_model(const LRModel& model, const std::filesystem::path& path);
LRModel load_lr_model(const std::filesystem::path& path);

}  // namespace salref
