#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synthfed/core.hpp"

namespace synthfed {

inline constexpr const char* kReferenceGeneratorId = "reference-tile-mosaic/1";

struct BundleProvenance {
  std::uint64_t seed = 0;
  std::size_t n_steps_kimg = 0;
  std::size_t n_gen = 0;
  std::string plan_hash;
  std::string generator_version = kReferenceGeneratorId;

  friend bool operator==(const BundleProvenance&, const BundleProvenance&) = default;
};

/// The shareable output of one site: filtered synthetic images, the masks the
/// site's real-data segmenter assigned to them, provenance and the filter
/// report. `sources` holds the synthetic sample ref of every kept image.
struct SyntheticBundle {
  std::string site_id;
  std::string modality;
  int num_classes = 1;
  Spacing spacing;
  BundleProvenance provenance;
  std::vector<Image2D> images;
  std::vector<SegMask> masks;
  std::vector<std::string> sources;
  std::string filter_report_csv;
  double threshold = 0.0;
  double percentile = 0.0;
};

/// Writes `dir/{manifest.json, filter_report.csv, images/, masks/}` and
/// returns the content hash recorded in the manifest. Images are stored as
/// 16-bit PNGs, so publish/load round-trips pixels on the 16-bit grid.
std::string publish_bundle(const SyntheticBundle& bundle, const std::filesystem::path& dir);

/// SHA-256 over the canonical manifest (without its content_hash field) and
/// the filter report bytes.
std::string compute_bundle_hash(const std::filesystem::path& dir);

/// Loads and validates a bundle: content hash, filter report hash, per-file
/// hashes, and that every image is listed as kept in the report. Throws
/// DataError on any mismatch.
SyntheticBundle load_bundle(const std::filesystem::path& dir);

/// Throws DataError if any bundle image is pixel-identical to an image of
/// `real`.
void check_no_real_images(const SyntheticBundle& bundle, const Dataset& real);

struct MergedSynthetic {
  Dataset data;               // one patient per bundle, items in bundle order
  std::string manifest_json;  // canonical, arrival-order independent
};

/// Validates every bundle directory and merges them, sorted by
/// (site_id, image index). Manifest paths are stored relative to
/// `merged_dir`, so the manifest does not depend on where the run lives.
MergedSynthetic merge_bundles(std::span<const std::filesystem::path> bundle_dirs,
                              const std::filesystem::path& merged_dir);

/// merge_bundles + writing `merged_dir/manifest.json`.
MergedSynthetic write_merged(std::span<const std::filesystem::path> bundle_dirs,
                             const std::filesystem::path& merged_dir);

/// Re-reads a merged manifest and its bundles (hash-checked).
MergedSynthetic load_merged(const std::filesystem::path& merged_dir);

}  // namespace synthfed
