#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthfed/stats.hpp"

namespace synthfed {

inline constexpr std::string_view kDiceMetric = "DS";
inline constexpr std::string_view kHd95Metric = "HD95";

/// One fold value of one metric for a (setting, test site) pair. HD95 is
/// undefined when a prediction or the reference is empty for every image.
struct MetricRow {
  std::string setting;
  std::string test_site;
  std::string metric;
  int fold = 0;
  std::optional<double> value;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Orders rows by (setting, test_site, metric, fold).
void sort_rows(std::vector<MetricRow>& rows);

/// `setting,test_site,metric,fold,value`; values at full precision,
/// "undefined" for missing HD95.
std::string metrics_to_csv(std::span<const MetricRow> rows);
std::vector<MetricRow> metrics_from_csv(std::string_view text);

/// Fixed-width mean ± sd table (one decimal), settings by test site and
/// metric.
std::string render_summary_table(std::span<const MetricRow> rows);

/// One paired comparison of syn-real against a control setting, pooled over
/// training sites, test sites and folds.
struct ComparisonTest {
  std::string metric;
  std::string treatment;  // "syn-real"
  std::string control;    // "real" or "syn-all"
  std::size_t n_pairs = 0;
  std::optional<TestOutcome> outcome;  // empty when the test cannot be run
  std::string note;
  BonferroniDecision decision;
};

/// The standard family: for DS and HD95, syn-real against real and against
/// syn-all (when present). DS tests H1 "syn-real higher", HD95 tests H1
/// "syn-real lower". `family_size` overrides the Bonferroni test count.
std::vector<ComparisonTest> compare_syn_real(std::span<const MetricRow> rows, double alpha,
                                             std::optional<std::size_t> family_size = std::nullopt);

std::string render_stats_table(std::span<const ComparisonTest> tests, double alpha);

/// Mean over training sites i, test sites j (i == j included) and folds of
/// DS(syn-real-i on j) - DS(real-i on j).
double mean_delta_ds(std::span<const MetricRow> rows);

/// Same, restricted to i != j, per fold; folds without pairs are skipped.
std::vector<std::pair<int, double>> cross_site_delta_ds_by_fold(std::span<const MetricRow> rows);

}  // namespace synthfed
