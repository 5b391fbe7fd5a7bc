#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synthfed/core.hpp"
#include "synthfed/embedding.hpp"

namespace synthfed {

inline constexpr double kDefaultPercentile = 5.0;

/// 1-based nearest rank ceil(p/100 * n) over ascending values; p = 0 picks
/// the minimum.
double nearest_rank_percentile(std::span<const double> sorted, double p);

struct NeighborMatch {
  std::size_t query = 0;
  std::size_t neighbor = 0;  // lowest index among equally distant candidates
  double distance = 0.0;     // L2
};

/// Exact brute-force nearest neighbour in `base` for every row of `queries`.
std::vector<NeighborMatch> nearest_neighbors(const EmbeddingSet& queries, const EmbeddingSet& base,
                                             std::size_t workers = 1);

struct AuditRow {
  std::string ref_a;
  std::string ref_b;
  double distance = 0.0;
};

std::vector<AuditRow> nearest_neighbor_audit(const EmbeddingSet& a, const EmbeddingSet& b, std::size_t workers = 1);

/// Random 50/50 patient split; with an odd count the extra patient goes to
/// the reference side. Indices refer to Dataset::items() order.
struct PatientSplit {
  std::vector<std::string> query_patients;
  std::vector<std::string> reference_patients;
  std::vector<std::size_t> query_items;
  std::vector<std::size_t> reference_items;
};

PatientSplit split_patients(const Dataset& real, std::uint64_t seed);

struct ThresholdCalibration {
  double p = kDefaultPercentile;
  std::uint64_t split_seed = 0;
  std::vector<double> distances;  // ascending real-to-real NN distances
  double threshold = 0.0;
};

/// Threshold from precomputed embeddings of `real` (rows in items() order).
ThresholdCalibration calibrate_threshold(const EmbeddingSet& real_embeddings, const PatientSplit& split, double p,
                                         std::uint64_t seed, std::size_t workers = 1);
ThresholdCalibration calibrate_threshold(const Dataset& real, const EmbeddingProvider& provider, double p,
                                         std::uint64_t seed, std::size_t workers = 1);

enum class Verdict { Kept, Discarded };

struct MemorizationEntry {
  std::string image_ref;
  std::string nn_real_ref;
  double nn_distance = 0.0;
  Verdict verdict = Verdict::Kept;
};

struct MemorizationReport {
  std::vector<MemorizationEntry> entries;
  std::size_t n_total = 0;
  std::size_t n_discarded = 0;
  double threshold = 0.0;

  std::size_t n_kept() const { return n_total - n_discarded; }
  /// image_ref,nn_ref,distance,verdict
  std::string to_csv() const;
};

/// Inverse of MemorizationReport::to_csv. The threshold is not part of the
/// CSV and comes back as 0. Throws DataError on malformed input.
MemorizationReport parse_memorization_csv(std::string_view csv);

/// Discards a synthetic image iff its NN distance to any real image is
/// strictly below the calibrated threshold.
MemorizationReport filter_synthetic(const EmbeddingSet& synthetic, const EmbeddingSet& real,
                                    const ThresholdCalibration& cal, std::size_t workers = 1);

enum class CorrelationStatus { Clear, Flagged, Indeterminate };

struct CorrelationEntry {
  std::string image_ref;
  std::string best_real_ref;  // empty when indeterminate
  double max_correlation = 0.0;
  CorrelationStatus status = CorrelationStatus::Clear;
};

struct CorrelationReport {
  double tau = 0.0;
  bool tau_auto = false;
  std::vector<CorrelationEntry> entries;
};

/// Pearson correlation between embedding vectors. Without `tau`, the
/// threshold is the nearest-rank 95th percentile of real-to-real maximum
/// correlations across `split` (required in that case). Zero-variance
/// vectors are never flagged: synthetic ones come back Indeterminate, real
/// ones are skipped as candidates.
CorrelationReport correlation_flagging(const EmbeddingSet& synthetic, const EmbeddingSet& real,
                                       std::optional<double> tau, const PatientSplit* split = nullptr);

double pearson_correlation(std::span<const float> a, std::span<const float> b);

}  // namespace synthfed
