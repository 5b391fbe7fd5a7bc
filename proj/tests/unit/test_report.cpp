#include <doctest.h>

#include "synthfed/error.hpp"
#include "synthfed/report.hpp"

using namespace synthfed;

namespace {

// Two sites; syn-real gains `gain` DS over real everywhere, and syn-all sits
// between them.
std::vector<MetricRow> grid(double gain) {
  std::vector<MetricRow> rows;
  for (int fold = 0; fold < 5; ++fold)
    for (const std::string test : {"A", "B"}) {
      const double base = 60.0 + fold + (test == "B" ? 3.0 : 0.0);
      for (const std::string site : {"A", "B"}) {
        const double shift = site == test ? 20.0 : 0.0;
        rows.push_back({"real-" + site, test, "DS", fold, base + shift});
        rows.push_back({"syn-real-" + site, test, "DS", fold, base + shift + gain + 0.1 * fold});
        rows.push_back({"real-" + site, test, "HD95", fold, 10.0 - fold * 0.1});
        rows.push_back({"syn-real-" + site, test, "HD95", fold, 8.0 - fold * 0.2});
      }
      rows.push_back({"syn-all", test, "DS", fold, base + gain / 2});
      rows.push_back({"syn-all", test, "HD95", fold, test == "A" ? std::optional<double>() : 9.0});
    }
  return rows;
}

}  // namespace

TEST_CASE("metrics CSV round-trip") {
  std::vector<MetricRow> rows = grid(2.0);
  const std::string csv = metrics_to_csv(rows);
  CHECK(csv.rfind("setting,test_site,metric,fold,value\n", 0) == 0);
  CHECK(csv.find("undefined") != std::string::npos);
  auto back = metrics_from_csv(csv);
  auto sorted = rows;
  sort_rows(sorted);
  sort_rows(back);
  CHECK(back == sorted);
  CHECK(metrics_to_csv(back) == metrics_to_csv(sorted));
  CHECK_THROWS_AS(metrics_from_csv("wrong,header\n"), DataError);
  CHECK_THROWS_AS(metrics_from_csv("setting,test_site,metric,fold,value\nx,A,DS,zero,1\n"), DataError);
}

TEST_CASE("summary table has one line per setting") {
  const auto rows = grid(2.0);
  const std::string table = render_summary_table(rows);
  for (const char* s : {"real-A", "real-B", "syn-real-A", "syn-real-B", "syn-all"})
    CHECK(table.find(s) != std::string::npos);
  CHECK(table.find("DS (A)") != std::string::npos);
  CHECK(table.find("HD95 (B)") != std::string::npos);
  CHECK(table.find("±") != std::string::npos);
}

TEST_CASE("syn-real comparisons form a family of four") {
  const auto tests = compare_syn_real(grid(2.0), 0.01);
  REQUIRE(tests.size() == 4);
  for (const auto& t : tests) CHECK(t.decision.threshold == doctest::Approx(0.0025));
  CHECK(tests[0].metric == "DS");
  CHECK(tests[0].control == "real");
  CHECK(tests[0].n_pairs == 20);
  REQUIRE(tests[0].outcome.has_value());
  CHECK(tests[0].outcome->p_value < 0.0025);
  CHECK(tests[0].decision.significant);
  const std::string table = render_stats_table(tests, 0.01);
  CHECK(table.find("0.0025") != std::string::npos);
  CHECK(compare_syn_real(grid(2.0), 0.01, 8)[0].decision.threshold == doctest::Approx(0.00125));
}

TEST_CASE("delta DS") {
  const auto rows = grid(2.0);
  // syn-real - real = 2 + 0.1 fold, averaged over folds 0..4
  CHECK(mean_delta_ds(rows) == doctest::Approx(2.2));
  const auto by_fold = cross_site_delta_ds_by_fold(rows);
  REQUIRE(by_fold.size() == 5);
  for (const auto& [fold, delta] : by_fold) CHECK(delta == doctest::Approx(2.0 + 0.1 * fold));
}
