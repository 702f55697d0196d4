#include "salref/eval.hpp"

#include <algorithm>
#include <cmath>

#include "salref/rng.hpp"

namespace salref {

double f1_score(int tp, int fp, int fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("f1: negative count");
  const double denom = 2.0 * tp + fp + fn;
  if (denom == 0.0) throw UndefinedMetricError("f1: zero denominator");
  return 2.0 * tp / denom;
}

double ppv(int tp, int fp) {
  if (tp < 0 || fp < 0) throw ValidationError("ppv: negative count");
  const double denom = static_cast<double>(tp) + fp;
  if (denom == 0.0) throw UndefinedMetricError("ppv: zero denominator");
  return tp / denom;
}

namespace {

struct Counts {
  int tp = 0, fp = 0, fn = 0;
};

Counts count_records(const std::vector<LesionRecord>& sample) {
  Counts c;
  for (const LesionRecord& r : sample) {
    switch (r.kind) {
      case LesionRecord::Kind::kTp:
        if (r.kept) ++c.tp;
        else ++c.fn;  // a rejected TP becomes a missed lesion
        break;
      case LesionRecord::Kind::kFp:
        if (r.kept) ++c.fp;
        break;
      case LesionRecord::Kind::kFn:
        ++c.fn;
        break;
    }
  }
  return c;
}

}  // namespace

BootstrapStats percentile_ci(std::vector<double> samples, double alpha) {
  if (samples.empty()) throw ValidationError("percentile_ci: empty sample list");
  std::sort(samples.begin(), samples.end());
  const std::size_t m = samples.size();
  // Nearest-rank order statistics.
  auto rank = [&](double q) {
    const double pos = q * static_cast<double>(m);
    std::size_t k = static_cast<std::size_t>(std::ceil(pos));
    if (k < 1) k = 1;
    if (k > m) k = m;
    return samples[k - 1];
  };
  BootstrapStats st;
  st.ci_low = rank(alpha / 2.0);
  st.ci_high = rank(1.0 - alpha / 2.0);
  double sum = 0.0;
  for (double v : samples) sum += v;
  st.mean = sum / static_cast<double>(m);
  return st;
}

MetricReport bootstrap_ci(const std::vector<LesionRecord>& records, int b,
                          double alpha, std::uint64_t seed, bool exhaustive) {
  if (records.empty()) throw ValidationError("bootstrap_ci: no records");
  if (b < 1) throw ValidationError("bootstrap_ci: B must be >= 1");

  MetricReport report;
  const Counts base = count_records(records);
  report.n_tp = base.tp;
  report.n_fp = base.fp;
  report.n_fn = base.fn;
  report.f1 = f1_score(base.tp, base.fp, base.fn);
  report.ppv = ppv(base.tp, base.fp);
  report.bootstrap_alpha = alpha;
  report.bootstrap_seed = seed;

  const std::size_t n = records.size();
  std::vector<double> f1_samples, ppv_samples;
  int skipped = 0;

  auto eval_sample = [&](const std::vector<LesionRecord>& sample) {
    const Counts c = count_records(sample);
    try {
      const double f = f1_score(c.tp, c.fp, c.fn);
      const double p = ppv(c.tp, c.fp);
      f1_samples.push_back(f);
      ppv_samples.push_back(p);
    } catch (const UndefinedMetricError&) {
      ++skipped;
    }
  };

  if (exhaustive) {
    // All n^n ordered resamples, odometer-style.
    std::vector<std::size_t> pick(n, 0);
    std::vector<LesionRecord> sample(n);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= n;
    for (std::size_t it = 0; it < total; ++it) {
      for (std::size_t i = 0; i < n; ++i) sample[i] = records[pick[i]];
      eval_sample(sample);
      for (std::size_t i = 0; i < n; ++i) {
        if (++pick[i] < n) break;
        pick[i] = 0;
      }
    }
    report.bootstrap_b = static_cast<int>(total);
  } else {
    std::vector<LesionRecord> sample(n);
    for (int rep = 0; rep < b; ++rep) {
      // Per-resample derived seed: scheduling-independent.
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep) + 1));
      for (std::size_t i = 0; i < n; ++i) {
        sample[i] = records[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))];
      }
      eval_sample(sample);
    }
    report.bootstrap_b = b;
  }

  report.skipped_resamples = skipped;
  if (f1_samples.empty()) {
    throw UndefinedMetricError("bootstrap_ci: every resample had undefined metrics");
  }
  report.f1_bootstrap = percentile_ci(f1_samples, alpha);
  report.ppv_bootstrap = percentile_ci(ppv_samples, alpha);
  return report;
}

namespace {

constexpr int kExactThreshold = 12;

// Midranks of the pooled sample; returns ranks aligned with the input order
// and the tie term sum(t^3 - t).
std::pair<std::vector<double>, double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n);
  double tie_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    i = j + 1;
  }
  return {std::move(ranks), tie_sum};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw ValidationError("mann_whitney_u: empty sample");
  }
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;

  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  auto [ranks, tie_sum] = midranks(pooled);

  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
  const double u = ra - static_cast<double>(na) * (na + 1) / 2.0;
  const double mu = static_cast<double>(na) * nb / 2.0;

  MannWhitneyResult res;
  res.u_a = u;

  if (n <= kExactThreshold) {
    // Enumerate all C(n, na) group assignments over the pooled midranks.
    res.exact = true;
    const double target = std::abs(u - mu) - 1e-12;
    std::size_t total = 0, extreme = 0;
    std::vector<std::size_t> idx(na);
    for (std::size_t i = 0; i < na; ++i) idx[i] = i;
    for (;;) {
      double rsum = 0.0;
      for (std::size_t i : idx) rsum += ranks[i];
      const double uu = rsum - static_cast<double>(na) * (na + 1) / 2.0;
      ++total;
      if (std::abs(uu - mu) >= target) ++extreme;
      // next combination
      std::size_t k = na;
      while (k > 0 && idx[k - 1] == n - na + k - 1) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t i = k; i < na; ++i) idx[i] = idx[i - 1] + 1;
    }
    res.p_two_sided = static_cast<double>(extreme) / static_cast<double>(total);
  } else {
    const double nn = static_cast<double>(n);
    const double var = (static_cast<double>(na) * nb / 12.0) *
                       (nn + 1.0 - tie_sum / (nn * (nn - 1.0)));
    if (var <= 0.0) {
      res.p_two_sided = 1.0;  // all pooled values tied
    } else {
      const double diff = u - mu;
      const double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);
      const double z = (diff + cc) / std::sqrt(var);
      res.p_two_sided = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
    }
  }
  return res;
}

namespace {

CohortStats cohort_stats(const std::vector<double>& v) {
  CohortStats s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

}  // namespace

ShiftReport domain_shift_report(const GroupedStats& train,
                                const GroupedStats& test) {
  ShiftReport report;
  const std::vector<std::string> groups = {"TP", "FP"};
  const std::vector<std::string> stats = {"mean", "max", "min"};

  for (const std::string& group : groups) {
    const auto ti = train.find(group);
    const auto si = test.find(group);
    if (ti == train.end() || ti->second.empty() || si == test.end() ||
        si->second.empty()) {
      report.warnings.push_back("group " + group +
                                " missing in one cohort; comparisons skipped");
      continue;
    }
    for (const std::string& stat : stats) {
      auto pick = [&](const std::vector<MapStats>& ms) {
        std::vector<double> v;
        v.reserve(ms.size());
        for (const MapStats& m : ms) {
          v.push_back(stat == "mean" ? m.mean : stat == "max" ? m.max : m.min);
        }
        return v;
      };
      const std::vector<double> tv = pick(ti->second);
      const std::vector<double> sv = pick(si->second);

      ShiftComparison cmp;
      cmp.group = group;
      cmp.statistic = stat;
      cmp.train = cohort_stats(tv);
      cmp.test = cohort_stats(sv);
      // Each cohort mean falls within one std of the other cohort's mean.
      cmp.within_one_std =
          std::abs(cmp.train.mean - cmp.test.mean) <= cmp.train.std &&
          std::abs(cmp.train.mean - cmp.test.mean) <= cmp.test.std;
      if (tv.size() >= 2 && sv.size() >= 2) {
        cmp.test_result = mann_whitney_u(tv, sv);
      } else {
        report.warnings.push_back("group " + group + " statistic " + stat +
                                  ": cohort of size 1, p-value omitted");
      }
      report.comparisons.push_back(std::move(cmp));
    }
  }
  return report;
}

}  // namespace salref
