#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "salref/refine.hpp"
#include "salref/rng.hpp"

using namespace salref;

namespace {

struct Problem {
  Matrix x;
  std::vector<int> y;
};

Problem random_problem(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Problem p{Matrix(rows, cols), {}};
  Rng rng(seed);
  for (double& v : p.x.data) v = rng.normal(0.0, 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    // labels correlated with the first feature, plus noise
    p.y.push_back(p.x.at(i, 0) + rng.normal(0.0, 0.8) > 0.0 ? 1 : 0);
  }
  // both classes present
  p.y[0] = 1;
  p.y[1] = 0;
  return p;
}

int nonzeros(const std::vector<double>& w) {
  int n = 0;
  for (double v : w) n += v != 0.0;
  return n;
}

}  // namespace

TEST_CASE("standardizer: fitted columns have mean 0, std 1") {
  Problem p = random_problem(30, 6, 1);
  Standardizer s = fit_standardizer(p.x);
  Matrix t = apply_standardizer(s, p.x);
  for (std::size_t c = 0; c < t.cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < t.rows; ++r) mean += t.at(r, c);
    mean /= t.rows;
    CHECK(std::abs(mean) <= 1e-9);
    double var = 0.0;
    for (std::size_t r = 0; r < t.rows; ++r) {
      var += (t.at(r, c) - mean) * (t.at(r, c) - mean);
    }
    var /= t.rows;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("standardizer: hand example and constant column drop") {
  Matrix x(2, 2);
  x.at(0, 0) = 1.0;
  x.at(1, 0) = 3.0;
  x.at(0, 1) = 5.0;
  x.at(1, 1) = 5.0;  // constant
  Standardizer s = fit_standardizer(x);
  REQUIRE(s.dropped.size() == 1);
  CHECK(s.dropped[0] == 1);
  Matrix t = apply_standardizer(s, x);
  CHECK(t.at(0, 0) == doctest::Approx(-1.0));
  CHECK(t.at(1, 0) == doctest::Approx(1.0));
  CHECK(t.at(0, 1) == 0.0);
  CHECK(t.at(1, 1) == 0.0);
}

TEST_CASE("train_lr: huge lambda zeroes weights, bias is weighted log-odds") {
  Problem p = random_problem(40, 5, 2);
  const ClassWeights cw{0.29, 0.71};
  LRModel m = train_lr(p.x, p.y, 1e6, cw, 10000, 1e-10);
  CHECK(nonzeros(m.weights) == 0);
  double wpos = 0.0, wneg = 0.0;
  for (int yi : p.y) (yi == 1 ? wpos : wneg) += yi == 1 ? cw.tp : cw.fp;
  CHECK(m.bias == doctest::Approx(std::log(wpos / wneg)).epsilon(1e-5));
}

TEST_CASE("train_lr: 1d separable data gives a positive weight") {
  Matrix x(4, 1);
  x.at(0, 0) = -1.0;
  x.at(1, 0) = -0.8;
  x.at(2, 0) = 0.8;
  x.at(3, 0) = 1.0;
  const std::vector<int> y = {0, 0, 1, 1};
  LRModel m = train_lr(x, y, 0.05, {0.5, 0.5});
  CHECK(m.weights[0] > 0.0);
  CHECK(std::abs(m.bias) < 0.5);  // boundary near 0
}

TEST_CASE("train_lr matches the proximal-gradient oracle") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Problem p = random_problem(20, 5, seed);
    const ClassWeights cw{0.29, 0.71};
    const double lambda = 0.1;
    LRModel m = train_lr(p.x, p.y, lambda, cw, 100000, 1e-10);
    const double obj = lr_objective(p.x, p.y, lambda, cw, m.weights, m.bias);
    oracle::ProxResult ref = oracle::prox_lr(p.x, p.y, lambda, cw);
    CHECK(std::abs(obj - ref.objective) <= 1e-6);
    CHECK(m.final_objective == doctest::Approx(obj).epsilon(1e-9));
  }
}

TEST_CASE("sparsity is non-increasing in lambda") {
  Problem p = random_problem(40, 8, 77);
  const double grid[5] = {0.01, 0.1, 0.5, 2.0, 10.0};
  int prev = 1 << 20;
  for (double lambda : grid) {
    LRModel m = train_lr(p.x, p.y, lambda, {0.29, 0.71}, 50000, 1e-9);
    const int nz = nonzeros(m.weights);
    CHECK(nz <= prev);
    prev = nz;
  }
}

TEST_CASE("single-class input rejected") {
  Problem p = random_problem(10, 3, 5);
  std::fill(p.y.begin(), p.y.end(), 1);
  CHECK_THROWS_AS(train_lr(p.x, p.y, 1.0, {0.29, 0.71}), ValidationError);
}

TEST_CASE("predict_proba basics") {
  LRModel m;
  m.weights = {0.0};
  m.bias = 0.0;
  CHECK(predict_proba(m, {3.0}) == doctest::Approx(0.5));

  m.weights = {1.0};
  CHECK(predict_proba(m, {2.0}) == doctest::Approx(0.8808).epsilon(1e-4));

  LRModel neg = m;
  neg.weights = {-1.0};
  neg.bias = -m.bias;
  CHECK(predict_proba(m, {0.7}) + predict_proba(neg, {0.7}) ==
        doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(predict_proba(m, {1.0, 2.0}), ValidationError);
}

TEST_CASE("feature importance normalization") {
  LRModel m;
  m.weights = {2.0, -4.0, 1.0};
  std::vector<double> imp = feature_importance(m);
  CHECK(imp[0] == doctest::Approx(0.5));
  CHECK(imp[1] == doctest::Approx(-1.0));
  CHECK(imp[2] == doctest::Approx(0.25));

  m.weights = {0.0, 0.0, -3.0};
  imp = feature_importance(m);
  CHECK(imp[0] == 0.0);
  CHECK(imp[1] == 0.0);
  CHECK(imp[2] == -1.0);

  m.weights = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(feature_importance(m), ValidationError);
}

namespace {

// A fixed match plus a model whose decision is controlled per lesion through
// the first feature: proba >= 0.5 iff value > 0.
struct RefineFixture {
  MatchResult match;
  std::vector<FeatureVector> features;
  LRModel model;

  RefineFixture(int n_tp, int n_fp, int n_fn, int keep_tp, int keep_fp) {
    int id = 1;
    for (int i = 0; i < n_tp; ++i) {
      match.tp.push_back({id, {id}});
      add_feature(id, i < keep_tp);
      ++id;
    }
    for (int i = 0; i < n_fp; ++i) {
      match.fp.push_back(id);
      add_feature(id, i < keep_fp);
      ++id;
    }
    for (int i = 0; i < n_fn; ++i) match.fn.push_back(1000 + i);
    match.n_tp = n_tp;
    match.n_fp = n_fp;
    match.n_fn = n_fn;
    model.weights.assign(kFeatureCount, 0.0);
    model.weights[0] = 10.0;
    model.bias = 0.0;
  }

  void add_feature(int id, bool keep) {
    FeatureVector f;
    f.lesion_id = id;
    f.values[0] = keep ? 1.0 : -1.0;
    features.push_back(f);
  }
};

}  // namespace

TEST_CASE("refine_predictions reproduces the published count arithmetic") {
  RefineFixture fx(3050, 1818, 789, 2732, 763);
  RefinedConfusion rc = refine_predictions(fx.match, fx.features, fx.model, 0.5);
  CHECK(rc.kept_tp == 2732);
  CHECK(rc.kept_fp == 763);
  CHECK(rc.rejected_tp == 318);
  CHECK(rc.rejected_fp == 1055);
  CHECK(rc.n_tp == 2732);
  CHECK(rc.n_fp == 763);
  CHECK(rc.n_fn == 1107);  // 789 + 318
  CHECK(rc.kept_tp + rc.rejected_tp == 3050);
  CHECK(rc.kept_fp + rc.rejected_fp == 1818);
}

TEST_CASE("refine_predictions threshold limits") {
  RefineFixture fx(5, 4, 2, 3, 1);
  RefinedConfusion all = refine_predictions(fx.match, fx.features, fx.model, 0.0);
  CHECK(all.n_tp == 5);
  CHECK(all.n_fp == 4);
  CHECK(all.n_fn == 2);

  // threshold above every reachable probability rejects everything
  RefinedConfusion none =
      refine_predictions(fx.match, fx.features, fx.model, 1.0);
  CHECK(none.n_tp == 0);
  CHECK(none.n_fp == 0);
  CHECK(none.n_fn == 7);
}

TEST_CASE("refine_predictions fails open on missing features") {
  RefineFixture fx(2, 2, 0, 0, 0);
  fx.features.erase(fx.features.begin());         // lesion 1: no vector
  fx.features[1].complete = false;                // lesion 3: incomplete
  RefinedConfusion rc = refine_predictions(fx.match, fx.features, fx.model, 0.5);
  CHECK(rc.excluded_kept == 2);
  CHECK(rc.kept_tp == 1);   // the excluded TP stays
  CHECK(rc.kept_fp == 1);   // the excluded FP stays
  CHECK(rc.rejected_tp == 1);
  CHECK(rc.rejected_fp == 1);
}

TEST_CASE("lr model json round trip") {
  Problem p = random_problem(25, 4, 9);
  LRModel m = train_lr(p.x, p.y, 0.3, {0.29, 0.71});
  m.standardizer = fit_standardizer(p.x);
  const auto path = std::filesystem::temp_directory_path() / "lr.json";
  save_lr_model(m, path);
  LRModel r = load_lr_model(path);
  CHECK(r.weights == m.weights);
  CHECK(r.bias == m.bias);
  CHECK(r.lambda == m.lambda);
  CHECK(r.class_weights.tp == m.class_weights.tp);
  CHECK(r.standardizer.mean == m.standardizer.mean);
  CHECK(r.standardizer.std == m.standardizer.std);
  CHECK(r.threshold == m.threshold);
}
