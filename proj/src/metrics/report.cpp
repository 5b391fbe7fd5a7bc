#include "synthfed/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "synthfed/error.hpp"

namespace synthfed {

namespace {

constexpr std::string_view kSynReal = "syn-real-";
constexpr std::string_view kReal = "real-";

// site of a per-site setting such as "syn-real-A"; empty for pooled ones
std::string site_of(const std::string& setting, std::string_view prefix) {
  if (setting.size() <= prefix.size() || setting.compare(0, prefix.size(), prefix) != 0) return {};
  return setting.substr(prefix.size());
}

int setting_rank(const std::string& s) {
  if (s == "real-all") return 5;
  if (s == "syn-all") return 3;
  if (s == "fedavg") return 6;
  if (s.rfind("syn-local-real-", 0) == 0) return 2;
  if (s.rfind("syn-local-", 0) == 0) return 1;
  if (s.rfind(kSynReal, 0) == 0) return 4;
  if (s.rfind(kReal, 0) == 0) return 0;
  return 7;
}

using Key = std::tuple<std::string, std::string, std::string, int>;  // setting, test site, metric, fold

std::map<Key, std::optional<double>> index_rows(std::span<const MetricRow> rows) {
  std::map<Key, std::optional<double>> out;
  for (const auto& r : rows) {
    if (!out.emplace(Key{r.setting, r.test_site, r.metric, r.fold}, r.value).second)
      throw DataError(fmt::format("metrics: duplicate row {}/{}/{}/fold {}", r.setting, r.test_site, r.metric, r.fold));
  }
  return out;
}

std::string format_cell(std::span<const std::optional<double>> values) {
  std::size_t defined = 0;
  for (const auto& v : values) defined += v.has_value();
  if (defined == 0) return "n/a";
  if (defined == 1) {
    for (const auto& v : values)
      if (v) return fmt::format("{:.1f}", *v);
  }
  const FoldAggregate agg = aggregate_folds(values);
  return fmt::format("{:.1f} ± {:.1f}{}", agg.mean, agg.sd, agg.n_excluded > 0 ? "*" : "");
}

// display width where "±" counts as one column
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string pad(const std::string& s, std::size_t width) {
  const std::size_t w = display_width(s);
  return s + std::string(width > w ? width - w : 0, ' ');
}

}  // namespace

void sort_rows(std::vector<MetricRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.setting, a.test_site, a.metric, a.fold) < std::tie(b.setting, b.test_site, b.metric, b.fold);
  });
}

std::string metrics_to_csv(std::span<const MetricRow> rows) {
  std::string out = "setting,test_site,metric,fold,value\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{}\n", r.setting, r.test_site, r.metric, r.fold,
                       r.value ? fmt::format("{:.17g}", *r.value) : std::string("undefined"));
  return out;
}

std::vector<MetricRow> metrics_from_csv(std::string_view text) {
  std::vector<MetricRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "setting,test_site,metric,fold,value") throw DataError("metrics csv: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 5) throw DataError(fmt::format("metrics csv line {}: expected 5 fields", line_no));
    MetricRow r{f[0], f[1], f[2], 0, std::nullopt};
    try {
      std::size_t used = 0;
      r.fold = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("fold");
      if (f[4] != "undefined") {
        r.value = std::stod(f[4], &used);
        if (used != f[4].size() || !std::isfinite(*r.value)) throw std::invalid_argument("value");
      }
    } catch (const std::exception&) {
      throw DataError(fmt::format("metrics csv line {}: bad number", line_no));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_summary_table(std::span<const MetricRow> rows) {
  const auto index = index_rows(rows);
  std::vector<std::string> settings;
  std::set<std::string> sites, metrics;
  std::set<int> folds;
  for (const auto& r : rows) {
    if (std::find(settings.begin(), settings.end(), r.setting) == settings.end()) settings.push_back(r.setting);
    sites.insert(r.test_site);
    metrics.insert(r.metric);
    folds.insert(r.fold);
  }
  std::sort(settings.begin(), settings.end(), [](const std::string& a, const std::string& b) {
    return std::pair(setting_rank(a), a) < std::pair(setting_rank(b), b);
  });
  // DS before HD95, anything else after
  std::vector<std::string> metric_order;
  for (auto m : {kDiceMetric, kHd95Metric})
    if (metrics.count(std::string(m))) metric_order.emplace_back(m);
  for (const auto& m : metrics)
    if (std::find(metric_order.begin(), metric_order.end(), m) == metric_order.end()) metric_order.push_back(m);

  std::vector<std::string> header{"setting"};
  for (const auto& site : sites)
    for (const auto& m : metric_order) header.push_back(fmt::format("{} ({})", m, site));
  std::vector<std::vector<std::string>> table{header};
  bool any_excluded = false;
  for (const auto& s : settings) {
    std::vector<std::string> line{s};
    for (const auto& site : sites) {
      for (const auto& m : metric_order) {
        std::vector<std::optional<double>> values;
        for (int f : folds) {
          auto it = index.find(Key{s, site, m, f});
          if (it != index.end()) values.push_back(it->second);
        }
        line.push_back(format_cell(values));
        any_excluded |= line.back().ends_with("*");
      }
    }
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], display_width(line[c]));
  std::string out;
  for (std::size_t l = 0; l < table.size(); ++l) {
    std::string text;
    for (std::size_t c = 0; c < table[l].size(); ++c) text += (c ? "  " : "") + pad(table[l][c], widths[c]);
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
    if (l == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      out += std::string(total + 2 * (widths.size() - 1), '-') + "\n";
    }
  }
  out += fmt::format("mean ± sd over {} fold(s); DS x100, HD95 in mm.\n", folds.size());
  if (any_excluded) out += "* some folds had an undefined HD95 and were excluded.\n";
  return out;
}

std::vector<ComparisonTest> compare_syn_real(std::span<const MetricRow> rows, double alpha,
                                             std::optional<std::size_t> family_size) {
  const auto index = index_rows(rows);
  bool has_syn_all = false;
  for (const auto& r : rows) has_syn_all |= r.setting == "syn-all";
  std::vector<std::string> controls{"real"};
  if (has_syn_all) controls.push_back("syn-all");

  std::vector<ComparisonTest> tests;
  for (auto metric_view : {kDiceMetric, kHd95Metric}) {
    const std::string metric(metric_view);
    for (const auto& control : controls) {
      ComparisonTest t{metric, "syn-real", control, 0, std::nullopt, {}, {}};
      std::vector<double> treat, ctrl;
      for (const auto& [key, value] : index) {
        const auto& [setting, test_site, m, fold] = key;
        if (m != metric) continue;
        const std::string site = site_of(setting, kSynReal);
        if (site.empty() || !value) continue;
        const std::string control_setting = control == "real" ? "real-" + site : control;
        auto it = index.find(Key{control_setting, test_site, metric, fold});
        if (it == index.end() || !it->second) continue;
        treat.push_back(*value);
        ctrl.push_back(*it->second);
      }
      t.n_pairs = treat.size();
      try {
        // higher Dice is better, lower HD95 is better
        t.outcome = metric == kDiceMetric ? wilcoxon_one_sided(treat, ctrl) : wilcoxon_one_sided(ctrl, treat);
      } catch (const DataError& e) {
        t.note = e.what();
      }
      tests.push_back(std::move(t));
    }
  }
  const std::size_t family = family_size.value_or(tests.size());
  for (auto& t : tests) {
    const double p = t.outcome ? t.outcome->p_value : 1.0;
    t.decision = bonferroni_single(p, alpha, family);
    if (!t.outcome) t.decision.significant = false;
  }
  return tests;
}

std::string render_stats_table(std::span<const ComparisonTest> tests, double alpha) {
  std::string out = fmt::format("{:<6} {:<22} {:>5} {:>9} {:>12} {:>8} {:>10} {:>5}\n", "metric", "comparison", "n",
                                "W", "p", "method", "threshold", "sig");
  for (const auto& t : tests) {
    const std::string cmp = fmt::format("{} {} {}", t.treatment, t.metric == kDiceMetric ? ">" : "<", t.control);
    if (!t.outcome) {
      out += fmt::format("{:<6} {:<22} {:>5} {:>9} {:>12} {:>8} {:>10.6g} {:>5}  ({})\n", t.metric, cmp, t.n_pairs, "-",
                         "-", "-", t.decision.threshold, "no", t.note);
      continue;
    }
    out += fmt::format("{:<6} {:<22} {:>5} {:>9.1f} {:>12.6g} {:>8} {:>10.6g} {:>5}\n", t.metric, cmp, t.n_pairs,
                       t.outcome->statistic, t.outcome->p_value,
                       t.outcome->method == TestMethod::Exact ? "exact" : "normal", t.decision.threshold,
                       t.decision.significant ? "yes" : "no");
  }
  out += fmt::format("one-sided Wilcoxon signed-rank, Bonferroni alpha = {:g}\n", alpha);
  return out;
}

double mean_delta_ds(std::span<const MetricRow> rows) {
  const auto index = index_rows(rows);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [key, value] : index) {
    const auto& [setting, test_site, metric, fold] = key;
    const std::string site = site_of(setting, kSynReal);
    if (metric != kDiceMetric || site.empty() || !value) continue;
    auto it = index.find(Key{"real-" + site, test_site, metric, fold});
    if (it == index.end() || !it->second) continue;
    sum += *value - *it->second;
    ++n;
  }
  if (n == 0) throw DataError("delta DS: no paired syn-real/real rows");
  return sum / static_cast<double>(n);
}

std::vector<std::pair<int, double>> cross_site_delta_ds_by_fold(std::span<const MetricRow> rows) {
  const auto index = index_rows(rows);
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& [key, value] : index) {
    const auto& [setting, test_site, metric, fold] = key;
    const std::string site = site_of(setting, kSynReal);
    if (metric != kDiceMetric || site.empty() || site == test_site || !value) continue;
    auto it = index.find(Key{"real-" + site, test_site, metric, fold});
    if (it == index.end() || !it->second) continue;
    acc[fold].first += *value - *it->second;
    acc[fold].second += 1;
  }
  std::vector<std::pair<int, double>> out;
  for (const auto& [fold, s] : acc) out.emplace_back(fold, s.first / static_cast<double>(s.second));
  return out;
}

}  // namespace synthfed
