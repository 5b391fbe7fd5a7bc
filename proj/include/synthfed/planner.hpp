#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "synthfed/core.hpp"

namespace synthfed {

struct AxisPair {
  int row = 1;
  int col = 1;

  friend bool operator==(const AxisPair&, const AxisPair&) = default;
};

struct ArchStage {
  AxisPair stride;
  AxisPair kernel;
  int channels = 1;

  friend bool operator==(const ArchStage&, const ArchStage&) = default;
};

struct SegPlan {
  Extent patch_size;
  std::vector<ArchStage> encoder_stages;
  std::vector<ArchStage> decoder_stages;  // encoder_stages reversed
  int base_channels = 32;
  int max_channels = 512;

  AxisPair stride_product() const;
  /// Feature grid at the bottom of the encoder.
  Extent bottleneck() const;

  friend bool operator==(const SegPlan&, const SegPlan&) = default;
};

struct GanPlan {
  Extent output_size;
  std::vector<ArchStage> generator_stages;
  std::vector<ArchStage> discriminator_stages;

  /// Grid the generator starts upsampling from.
  Extent latent_grid() const;

  friend bool operator==(const GanPlan&, const GanPlan&) = default;
};

struct TrainingBudget {
  std::size_t n_steps_kimg = 0;  // thousands of real images shown to the generator
  std::size_t n_gen = 0;
  double warmup_fraction = 0.1;
  int epochs = 50;

  friend bool operator==(const TrainingBudget&, const TrainingBudget&) = default;
};

struct LrSchedule {
  double base_rate = 1.0;
  int total_epochs = 1;
  int warmup_epochs = 1;
};

inline constexpr int kMaxPoolings = 5;
inline constexpr double kWarmupFraction = 0.1;
inline constexpr double kPolyDecayExponent = 0.9;

SegPlan derive_seg_plan(const DatasetFingerprint& f);

/// Structural copy: generator = decoder, discriminator = encoder.
GanPlan derive_gan_plan(const SegPlan& p);

TrainingBudget derive_budget(const DatasetFingerprint& f, int epochs = 50);

/// warmup_epochs = ceil(total_epochs / 10).
LrSchedule make_lr_schedule(double base_rate, int total_epochs);

/// Linear warm-up over the first warmup_epochs, then polynomial (0.9) decay.
double lr_at(const LrSchedule& s, int epoch);

/// Everything written to plan.json.
struct PlanDocument {
  DatasetFingerprint fingerprint;
  SegPlan seg;
  GanPlan gan;
  TrainingBudget budget;

  friend bool operator==(const PlanDocument&, const PlanDocument&) = default;
};

PlanDocument make_plan_document(const DatasetFingerprint& f, int epochs = 50);
std::string serialize_plan(const PlanDocument& doc);
PlanDocument parse_plan(const std::string& text);

std::string serialize_fingerprint(const DatasetFingerprint& f);

/// SHA-256 of the canonical seg-plan JSON; identifies the architecture a
/// model was trained for.
std::string plan_hash(const SegPlan& p);

}  // namespace synthfed
