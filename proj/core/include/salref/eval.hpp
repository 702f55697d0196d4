#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "salref/errors.hpp"

namespace salref {

double f1_score(int tp, int fp, int fn);
double ppv(int tp, int fp);

// One detection outcome at lesion granularity: the resampling unit for the
// bootstrap. `kept` reflects the refinement decision (always true for FN).
struct LesionRecord {
  enum class Kind { kTp, kFp, kFn };
  Kind kind = Kind::kTp;
  bool kept = true;
};

struct BootstrapStats {
  double mean = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
};

struct MetricReport {
  int n_tp = 0, n_fp = 0, n_fn = 0;
  double f1 = 0.0;
  double ppv = 0.0;
  std::optional<BootstrapStats> f1_bootstrap, ppv_bootstrap;
  int bootstrap_b = 0;
  double bootstrap_alpha = 0.05;
  std::uint64_t bootstrap_seed = 0;
  int skipped_resamples = 0;  // resamples with undefined metrics
};

// Lesion-level resampling with replacement; percentile CI (nearest-rank order
// statistics at alpha/2 and 1-alpha/2). When exhaustive is true, every one of
// the n^n ordered resamples is enumerated instead of drawing B random ones
// (only sensible for tiny record lists).
MetricReport bootstrap_ci(const std::vector<LesionRecord>& records, int b = 1000,
                          double alpha = 0.05, std::uint64_t seed = 0,
                          bool exhaustive = false);

// Percentile bounds used by the bootstrap, exposed for direct assertion.
BootstrapStats percentile_ci(std::vector<double> samples, double alpha);

struct MannWhitneyResult {
  double u_a = 0.0;       // U statistic of the first sample (midranks)
  double p_two_sided = 1.0;
  bool exact = false;     // exact enumeration used (n_a + n_b <= threshold)
};

// U = R_a - n_a(n_a+1)/2 with midranks for ties. Exact two-sided p by full
// enumeration when n_a + n_b <= 12 (p = probability of |U - mu| >= observed);
// otherwise normal approximation with tie-corrected variance and continuity
// correction.
MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b);

struct CohortStats {
  std::size_t n = 0;
  double mean = 0.0, std = 0.0;  // population std
};

struct ShiftComparison {
  std::string group;      // "TP" or "FP"
  std::string statistic;  // "mean", "max", "min"
  CohortStats train, test;
  std::optional<MannWhitneyResult> test_result;  // absent for n < 2 cohorts
  bool within_one_std = false;
};

// Per-lesion saliency summary statistics for one cohort.
struct MapStats {
  double mean = 0.0, max = 0.0, min = 0.0;
};
using GroupedStats = std::map<std::string, std::vector<MapStats>>;  // by group

struct ShiftReport {
  std::vector<ShiftComparison> comparisons;
  std::vector<std::string> warnings;
};

ShiftReport domain_shift_report(const GroupedStats& train,
                                const GroupedStats& test);

}  // namespace salref
