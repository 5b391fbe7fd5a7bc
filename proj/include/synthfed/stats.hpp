#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace synthfed {

struct FoldAggregate {
  double mean = 0.0;
  double sd = 0.0;  // n-1 denominator
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // undefined entries (e.g. HD95 with an empty mask)
};

FoldAggregate aggregate_folds(std::span<const std::optional<double>> values);
FoldAggregate aggregate_folds(std::span<const double> values);

enum class TestMethod { Exact, NormalApproximation };

struct TestOutcome {
  double statistic = 0.0;  // W+, sum of ranks of positive differences
  double p_value = 1.0;
  std::size_t n_effective = 0;
  TestMethod method = TestMethod::Exact;
};

inline constexpr std::size_t kExactWilcoxonMax = 25;

/// One-sided signed-rank test of H1: x tends to exceed y. Zero differences
/// are dropped, tied |d| get average ranks. Exact null distribution for up to
/// 25 non-zero differences, else normal approximation with tie and
/// continuity corrections.
TestOutcome wilcoxon_one_sided(std::span<const double> x, std::span<const double> y);

struct BonferroniDecision {
  double p_value = 1.0;
  double threshold = 0.0;
  bool significant = false;
};

std::vector<BonferroniDecision> bonferroni(std::span<const double> p_values, double alpha);

/// Bonferroni with an explicit family size (tests may be reported one at a
/// time).
BonferroniDecision bonferroni_single(double p_value, double alpha, std::size_t n_tests);

}  // namespace synthfed
