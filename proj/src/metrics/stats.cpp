#include "synthfed/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "synthfed/error.hpp"

namespace synthfed {

FoldAggregate aggregate_folds(std::span<const std::optional<double>> values) {
  std::vector<double> finite;
  std::size_t excluded = 0;
  for (const auto& v : values) {
    if (v && std::isfinite(*v))
      finite.push_back(*v);
    else
      ++excluded;
  }
  FoldAggregate out = aggregate_folds(finite);
  out.n_excluded = excluded;
  return out;
}

FoldAggregate aggregate_folds(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted)
    if (!std::isfinite(v)) throw DataError("aggregate: non-finite value");
  if (sorted.size() < 2) throw DataError("aggregate: need at least 2 finite values");
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  return FoldAggregate{mean, std::sqrt(ss / (n - 1.0)), sorted.size(), 0};
}

namespace {

// Average ranks (1-based) of |d|, returned doubled so ties stay integral.
std::vector<std::uint32_t> doubled_ranks(const std::vector<double>& abs_d) {
  const std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
  std::vector<std::uint32_t> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
    // positions i..j hold ranks i+1..j+1; twice their mean is i+j+2
    const auto twice_avg = static_cast<std::uint32_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = twice_avg;
    i = j + 1;
  }
  return ranks;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

TestOutcome wilcoxon_one_sided(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("wilcoxon: paired lists differ in length");
  if (x.size() < 5) throw DataError("wilcoxon: need at least 5 pairs");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (!std::isfinite(d)) throw DataError("wilcoxon: non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw DataError("wilcoxon: all differences are zero");

  std::vector<double> abs_d(diffs.size());
  std::transform(diffs.begin(), diffs.end(), abs_d.begin(), [](double d) { return std::fabs(d); });
  const auto ranks = doubled_ranks(abs_d);
  std::uint64_t w2 = 0;  // doubled W+
  for (std::size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > 0) w2 += ranks[i];

  TestOutcome out;
  out.n_effective = diffs.size();
  out.statistic = static_cast<double>(w2) / 2.0;
  const std::size_t n = diffs.size();

  if (n <= kExactWilcoxonMax) {
    // Counts of the 2^n equally likely sign assignments by doubled rank sum.
    const std::uint64_t total2 = std::accumulate(ranks.begin(), ranks.end(), std::uint64_t{0});
    std::vector<std::uint64_t> counts(total2 + 1, 0);
    counts[0] = 1;
    std::uint64_t reach = 0;
    for (std::uint32_t r : ranks) {
      for (std::uint64_t s = reach + 1; s-- > 0;)
        if (counts[s]) counts[s + r] += counts[s];
      reach += r;
    }
    std::uint64_t upper = 0;
    for (std::uint64_t s = w2; s <= total2; ++s) upper += counts[s];
    out.p_value = static_cast<double>(upper) / std::ldexp(1.0, static_cast<int>(n));
    out.method = TestMethod::Exact;
    return out;
  }

  const auto nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  std::vector<double> sorted = abs_d;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (out.statistic - mean - 0.5) / std::sqrt(var);
  out.p_value = std::clamp(normal_upper_tail(z), 0.0, 1.0);
  out.method = TestMethod::NormalApproximation;
  return out;
}

BonferroniDecision bonferroni_single(double p_value, double alpha, std::size_t n_tests) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("bonferroni: alpha must be in (0, 1)");
  if (n_tests < 1) throw UsageError("bonferroni: need at least one test");
  const double threshold = alpha / static_cast<double>(n_tests);
  return {p_value, threshold, p_value < threshold};
}

std::vector<BonferroniDecision> bonferroni(std::span<const double> p_values, double alpha) {
  std::vector<BonferroniDecision> out;
  for (double p : p_values) out.push_back(bonferroni_single(p, alpha, p_values.size()));
  return out;
}

}  // namespace synthfed
