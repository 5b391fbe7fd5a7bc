#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synthfed/image.hpp"
#include "synthfed/planner.hpp"

namespace synthfed {

struct LabeledImage {
  const Image2D* image;
  const SegMask* mask;
};

/// Desk-scale stand-in for a segmentation network: per-pixel class prior map
/// plus per-class Gaussian intensity prototypes over a 3x3 box-filtered
/// intensity. Prediction takes the argmax of log prior + log likelihood.
///
/// Its state is a flat float vector of learning-rate weighted sufficient
/// statistics: for every class (mass, sum, sum of squares), followed by a
/// (classes x rows x cols) prior map at the plan's patch size. Each epoch adds
/// lr(epoch) times the dataset-mean statistics, so an epoch carries the same
/// update mass whatever the dataset size.
class ReferenceSegmenter {
 public:
  ReferenceSegmenter(SegPlan plan, int num_classes);

  const SegPlan& plan() const noexcept { return plan_; }
  int num_classes() const noexcept { return num_classes_; }
  std::span<const float> parameters() const noexcept { return params_; }
  void set_parameters(std::span<const float> params);
  std::size_t parameter_count() const noexcept { return params_.size(); }
  bool trained() const;

  /// Applies epochs [first_epoch, first_epoch + n_epochs) of `schedule`.
  void train(std::span<const LabeledImage> data, const LrSchedule& schedule, int first_epoch, int n_epochs);

  SegMask predict(const Image2D& image) const;

  void save(const std::filesystem::path& path) const;
  static ReferenceSegmenter load(const std::filesystem::path& path);

  friend bool operator==(const ReferenceSegmenter&, const ReferenceSegmenter&) = default;

 private:
  std::size_t class_block() const { return 3 * static_cast<std::size_t>(num_classes_ + 1); }
  std::vector<float> epoch_statistics(std::span<const LabeledImage> data) const;

  SegPlan plan_;
  int num_classes_;
  std::vector<float> params_;
};

/// Trains for schedule.total_epochs epochs, starting from `init` when given
/// (fine-tuning) or from an empty model.
ReferenceSegmenter fit_segmenter(const SegPlan& plan, int num_classes, std::span<const LabeledImage> train,
                                 const LrSchedule& schedule, const ReferenceSegmenter* init = nullptr);

/// Same, with an explicit epoch count; zero epochs returns `init` unchanged.
ReferenceSegmenter fit_segmenter(const SegPlan& plan, int num_classes, std::span<const LabeledImage> train, int epochs,
                                 double base_rate, const ReferenceSegmenter* init = nullptr);

/// Element-wise average of parameter vectors weighted by local sample counts.
/// Each element's terms are sorted before summation so the result does not
/// depend on the order of the (model, weight) pairs.
std::vector<float> fedavg_round(std::span<const std::span<const float>> params, std::span<const double> weights);
std::vector<float> fedavg_round(std::span<const ReferenceSegmenter* const> models, std::span<const double> weights);

/// 3x3 box filter (edge-replicated) of the channel-mean intensity.
std::vector<float> box_filtered_intensity(const Image2D& image);

}  // namespace synthfed
