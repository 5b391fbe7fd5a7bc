#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "synthfed/image.hpp"

namespace synthfed {

struct Item {
  std::string ref;  // "<patient_id>/<index>", stable across runs
  Image2D image;
  std::optional<SegMask> mask;
};

struct PatientRecord {
  std::string id;
  Spacing spacing;
  std::vector<Item> items;
};

struct Dataset {
  std::string site_id;
  std::string modality;
  int num_classes = 1;
  std::vector<PatientRecord> patients;

  std::size_t image_count() const;
  /// All images in (patient, item) order.
  std::vector<const Item*> items() const;
};

/// Checks the dataset invariants; throws DataError on the first violation.
void validate_dataset(const Dataset& d);

/// Patients in `ids` (any order); result keeps dataset order.
Dataset subset(const Dataset& d, const std::vector<std::string>& ids);

struct DatasetFingerprint {
  Extent median_size;
  Spacing median_spacing;
  std::size_t n_images = 0;
  std::size_t n_patients = 0;
  int channels = 1;
  int num_classes = 1;

  friend bool operator==(const DatasetFingerprint&, const DatasetFingerprint&) = default;
};

DatasetFingerprint fingerprint_dataset(const Dataset& d);

inline constexpr int kFoldCount = 5;

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train_patients;
  std::vector<std::string> val_patients;
  std::vector<std::string> test_patients;

  friend bool operator==(const FoldSplit&, const FoldSplit&) = default;
};

/// Patient-level 3:1:1 rotation over five seeded folds. Fold i tests on
/// partition i, validates on i+4 and trains on i+1..i+3 (mod 5).
std::vector<FoldSplit> make_fold_splits(const Dataset& d, std::uint64_t seed);

/// Reads `manifest.json` plus PNG images/masks; intensities are min-max
/// normalized per image.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes a dataset in the layout load_dataset reads (16-bit images).
void save_dataset(const Dataset& d, const std::filesystem::path& root);

}  // namespace synthfed
