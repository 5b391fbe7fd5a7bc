#include "synthfed/memfilter.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "synthfed/error.hpp"
#include "synthfed/parallel.hpp"
#include "synthfed/rng.hpp"
#include "synthfed/simd.hpp"

namespace synthfed {

double nearest_rank_percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("percentile of an empty list");
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("percentile must be in [0, 100]");
  const auto n = static_cast<double>(sorted.size());
  // p * n is exact for integral p, so the ceil does not see rounding noise.
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<NeighborMatch> nearest_neighbors(const EmbeddingSet& queries, const EmbeddingSet& base,
                                             std::size_t workers) {
  if (queries.empty() || base.empty()) throw DataError("nearest neighbours: empty set");
  if (queries.dimension() != base.dimension())
    throw DataError("nearest neighbours: dimension mismatch " + std::to_string(queries.dimension()) + " vs " +
                    std::to_string(base.dimension()));
  std::vector<NeighborMatch> out(queries.size());
  parallel_for(queries.size(), workers, [&](std::size_t q) {
    const auto row = queries.row(q);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    for (std::size_t j = 0; j < base.size(); ++j) {
      const double d2 = simd::squared_distance(row, base.row(j));
      if (d2 < best) {
        best = d2;
        best_index = j;
      }
    }
    out[q] = {q, best_index, std::sqrt(best)};
  });
  return out;
}

std::vector<AuditRow> nearest_neighbor_audit(const EmbeddingSet& a, const EmbeddingSet& b, std::size_t workers) {
  std::vector<AuditRow> out;
  for (const auto& m : nearest_neighbors(a, b, workers)) out.push_back({a.ref(m.query), b.ref(m.neighbor), m.distance});
  return out;
}

PatientSplit split_patients(const Dataset& real, std::uint64_t seed) {
  if (real.patients.size() < 2) throw DataError("calibration: need at least 2 patients in " + real.site_id);
  std::vector<std::string> ids;
  for (const auto& p : real.patients) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t half = ids.size() / 2;
  PatientSplit split;
  split.query_patients.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(half));
  split.reference_patients.assign(ids.begin() + static_cast<std::ptrdiff_t>(half), ids.end());
  std::sort(split.query_patients.begin(), split.query_patients.end());
  std::sort(split.reference_patients.begin(), split.reference_patients.end());

  const std::set<std::string> query(split.query_patients.begin(), split.query_patients.end());
  std::size_t index = 0;
  for (const auto& p : real.patients) {
    auto& target = query.count(p.id) ? split.query_items : split.reference_items;
    for (std::size_t k = 0; k < p.items.size(); ++k) target.push_back(index++);
  }
  if (split.query_items.empty() || split.reference_items.empty())
    throw DataError("calibration: empty subset after split");
  return split;
}

ThresholdCalibration calibrate_threshold(const EmbeddingSet& real_embeddings, const PatientSplit& split, double p,
                                         std::uint64_t seed, std::size_t workers) {
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("calibration: p must be in [0, 100]");
  if (split.query_items.empty() || split.reference_items.empty())
    throw DataError("calibration: empty subset after split");
  const EmbeddingSet query = real_embeddings.select(split.query_items);
  const EmbeddingSet reference = real_embeddings.select(split.reference_items);
  ThresholdCalibration cal;
  cal.p = p;
  cal.split_seed = seed;
  for (const auto& m : nearest_neighbors(query, reference, workers)) cal.distances.push_back(m.distance);
  std::sort(cal.distances.begin(), cal.distances.end());
  cal.threshold = nearest_rank_percentile(cal.distances, p);
  return cal;
}

ThresholdCalibration calibrate_threshold(const Dataset& real, const EmbeddingProvider& provider, double p,
                                         std::uint64_t seed, std::size_t workers) {
  const PatientSplit split = split_patients(real, seed);
  return calibrate_threshold(embed_dataset(real, provider), split, p, seed, workers);
}

std::string MemorizationReport::to_csv() const {
  std::ostringstream out;
  out << "image_ref,nn_ref,distance,verdict\n";
  for (const auto& e : entries)
    out << e.image_ref << ',' << e.nn_real_ref << ',' << fmt::format("{:.9g}", e.nn_distance) << ','
        << (e.verdict == Verdict::Discarded ? "discarded" : "kept") << '\n';
  return out.str();
}

MemorizationReport parse_memorization_csv(std::string_view csv) {
  MemorizationReport report;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != "image_ref,nn_ref,distance,verdict")
    throw DataError("filter report: unexpected header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // nn refs may contain commas; image refs, distances and verdicts do not
    const auto first = line.find(',');
    const auto last = line.rfind(',');
    const auto second_last = last == std::string::npos || last == 0 ? std::string::npos : line.rfind(',', last - 1);
    if (first == std::string::npos || second_last == std::string::npos || second_last < first)
      throw DataError(fmt::format("filter report line {}: malformed", line_no));
    MemorizationEntry e;
    e.image_ref = line.substr(0, first);
    e.nn_real_ref = first == second_last ? std::string() : line.substr(first + 1, second_last - first - 1);
    const std::string distance = line.substr(second_last + 1, last - second_last - 1);
    const std::string verdict = line.substr(last + 1);
    try {
      std::size_t used = 0;
      e.nn_distance = std::stod(distance, &used);
      if (used != distance.size()) throw std::invalid_argument(distance);
    } catch (const std::exception&) {
      throw DataError(fmt::format("filter report line {}: bad distance", line_no));
    }
    if (verdict == "kept")
      e.verdict = Verdict::Kept;
    else if (verdict == "discarded")
      e.verdict = Verdict::Discarded;
    else
      throw DataError(fmt::format("filter report line {}: unknown verdict '{}'", line_no, verdict));
    report.n_discarded += e.verdict == Verdict::Discarded;
    report.entries.push_back(std::move(e));
  }
  report.n_total = report.entries.size();
  return report;
}

MemorizationReport filter_synthetic(const EmbeddingSet& synthetic, const EmbeddingSet& real,
                                    const ThresholdCalibration& cal, std::size_t workers) {
  if (synthetic.empty()) throw DataError("filter: empty synthetic set");
  MemorizationReport report;
  report.threshold = cal.threshold;
  for (const auto& m : nearest_neighbors(synthetic, real, workers)) {
    const Verdict v = m.distance < cal.threshold ? Verdict::Discarded : Verdict::Kept;
    report.entries.push_back({synthetic.ref(m.query), real.ref(m.neighbor), m.distance, v});
    if (v == Verdict::Discarded) ++report.n_discarded;
  }
  report.n_total = report.entries.size();
  return report;
}

namespace {

// Centered, unit-norm copy; empty when the vector has zero variance.
std::vector<double> standardize(std::span<const float> v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  std::vector<double> out(v.size());
  double norm2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] - mean;
    norm2 += out[i] * out[i];
  }
  if (!(norm2 > 0.0)) return {};
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : out) x *= inv;
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::vector<double>> standardize_all(const EmbeddingSet& set) {
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(standardize(set.row(i)));
  return out;
}

// Max correlation of `z` against candidates; returns (-inf, npos) when none
// has variance.
std::pair<double, std::size_t> best_match(const std::vector<double>& z, const std::vector<std::vector<double>>& cands,
                                          std::span<const std::size_t> indices) {
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_index = std::string::npos;
  for (std::size_t j : indices) {
    if (cands[j].empty()) continue;
    const double r = dot(z, cands[j]);
    if (r > best) {
      best = r;
      best_index = j;
    }
  }
  return {best, best_index};
}

}  // namespace

double pearson_correlation(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.size() < 2) throw DataError("correlation: need equal dimensions >= 2");
  const auto za = standardize(a);
  const auto zb = standardize(b);
  if (za.empty() || zb.empty()) return std::numeric_limits<double>::quiet_NaN();
  return dot(za, zb);
}

CorrelationReport correlation_flagging(const EmbeddingSet& synthetic, const EmbeddingSet& real,
                                       std::optional<double> tau, const PatientSplit* split) {
  if (synthetic.dimension() != real.dimension() || real.dimension() < 2)
    throw DataError("correlation: vectors need equal dimension >= 2");
  if (real.empty()) throw DataError("correlation: empty real set");
  const auto real_z = standardize_all(real);
  std::vector<std::size_t> all_real(real.size());
  for (std::size_t i = 0; i < all_real.size(); ++i) all_real[i] = i;

  CorrelationReport report;
  if (tau) {
    report.tau = *tau;
  } else {
    if (split == nullptr) throw UsageError("correlation: automatic tau needs the calibration split");
    std::vector<double> maxima;
    for (std::size_t q : split->query_items) {
      if (real_z.at(q).empty()) continue;
      const auto [r, j] = best_match(real_z[q], real_z, split->reference_items);
      if (j != std::string::npos) maxima.push_back(r);
    }
    if (maxima.empty()) throw DataError("correlation: no real vector with variance to calibrate tau");
    std::sort(maxima.begin(), maxima.end());
    report.tau = nearest_rank_percentile(maxima, 95.0);
    report.tau_auto = true;
  }

  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    CorrelationEntry e;
    e.image_ref = synthetic.ref(i);
    const auto z = standardize(synthetic.row(i));
    const auto [r, j] = z.empty() ? std::pair{0.0, std::string::npos} : best_match(z, real_z, all_real);
    if (j == std::string::npos) {
      e.status = CorrelationStatus::Indeterminate;
    } else {
      e.max_correlation = r;
      e.best_real_ref = real.ref(j);
      e.status = r > report.tau ? CorrelationStatus::Flagged : CorrelationStatus::Clear;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace synthfed
