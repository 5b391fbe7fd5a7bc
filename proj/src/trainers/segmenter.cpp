#include "synthfed/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "synthfed/error.hpp"
#include "synthfed/simd.hpp"

namespace synthfed {

namespace {
constexpr std::uint32_t kModelVersion = 1;
constexpr double kPriorSmoothing = 0.02;
constexpr double kVarianceFloor = 1e-4;
}  // namespace

std::vector<float> box_filtered_intensity(const Image2D& image) {
  const int h = image.height();
  const int w = image.width();
  std::vector<float> gray(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) gray[static_cast<std::size_t>(r) * w + c] = image.intensity(r, c);
  std::vector<float> out(gray.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float sum = 0.0f;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = std::clamp(r + dr, 0, h - 1);
        for (int dc = -1; dc <= 1; ++dc) sum += gray[static_cast<std::size_t>(rr) * w + std::clamp(c + dc, 0, w - 1)];
      }
      out[static_cast<std::size_t>(r) * w + c] = sum / 9.0f;
    }
  }
  return out;
}

ReferenceSegmenter::ReferenceSegmenter(SegPlan plan, int num_classes)
    : plan_(std::move(plan)), num_classes_(num_classes) {
  if (num_classes < 1 || num_classes > 254) throw DataError("segmenter: class count out of range");
  const std::size_t pixels = static_cast<std::size_t>(plan_.patch_size.rows) * plan_.patch_size.cols;
  params_.assign(class_block() + static_cast<std::size_t>(num_classes + 1) * pixels, 0.0f);
}

void ReferenceSegmenter::set_parameters(std::span<const float> params) {
  if (params.size() != params_.size())
    throw DataError("segmenter: parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                    std::to_string(params_.size()));
  params_.assign(params.begin(), params.end());
}

bool ReferenceSegmenter::trained() const {
  double mass = 0.0;
  for (int c = 0; c <= num_classes_; ++c) mass += params_[3 * static_cast<std::size_t>(c)];
  return mass > 0.0;
}

std::vector<float> ReferenceSegmenter::epoch_statistics(std::span<const LabeledImage> data) const {
  const Extent patch = plan_.patch_size;
  const std::size_t pixels = static_cast<std::size_t>(patch.rows) * patch.cols;
  std::vector<double> stats(params_.size(), 0.0);
  for (const auto& item : data) {
    if (item.mask->num_classes() != num_classes_)
      throw DataError("segmenter: training mask has " + std::to_string(item.mask->num_classes()) +
                      " classes, model has " + std::to_string(num_classes_));
    if (item.mask->extent() != item.image->extent()) throw DataError("segmenter: image/mask shape mismatch");
    const Image2D image = resize_bilinear(*item.image, patch);
    const SegMask mask = resize_nearest(*item.mask, patch);
    const auto feature = box_filtered_intensity(image);
    const auto labels = mask.labels();
    const double inv = 1.0 / static_cast<double>(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
      const std::size_t c = labels[i];
      const double x = feature[i];
      stats[3 * c] += inv;
      stats[3 * c + 1] += x * inv;
      stats[3 * c + 2] += x * x * inv;
      stats[class_block() + c * pixels + i] += 1.0;
    }
  }
  const double scale = 1.0 / static_cast<double>(data.size());
  std::vector<float> out(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) out[i] = static_cast<float>(stats[i] * scale);
  return out;
}

void ReferenceSegmenter::train(std::span<const LabeledImage> data, const LrSchedule& schedule, int first_epoch,
                               int n_epochs) {
  if (n_epochs <= 0) return;
  if (data.empty()) throw DataError("segmenter: empty training set");
  // The data does not change between epochs, so one pass yields every epoch's
  // statistics; the epochs differ only in their learning rate.
  const std::vector<float> stats = epoch_statistics(data);
  for (int e = first_epoch; e < first_epoch + n_epochs; ++e)
    simd::axpy(params_, stats, static_cast<float>(lr_at(schedule, e)));
}

SegMask ReferenceSegmenter::predict(const Image2D& image) const {
  if (!trained()) throw DataError("segmenter: predict() on an untrained model");
  const Extent patch = plan_.patch_size;
  const std::size_t pixels = static_cast<std::size_t>(patch.rows) * patch.cols;
  const auto classes = static_cast<std::size_t>(num_classes_ + 1);

  std::vector<double> mean(classes), var(classes), log_norm(classes);
  bool has_class[256] = {};
  for (std::size_t c = 0; c < classes; ++c) {
    const double mass = params_[3 * c];
    if (!(mass > 0.0)) continue;
    has_class[c] = true;
    mean[c] = params_[3 * c + 1] / mass;
    var[c] = std::max(params_[3 * c + 2] / mass - mean[c] * mean[c], 0.0) + kVarianceFloor;
    log_norm[c] = -0.5 * std::log(var[c]);
  }

  const Image2D resized = resize_bilinear(image, patch);
  const auto feature = box_filtered_intensity(resized);
  std::vector<std::uint8_t> labels(pixels);
  for (std::size_t i = 0; i < pixels; ++i) {
    double weight_sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) weight_sum += params_[class_block() + c * pixels + i];
    const double smoothing = kPriorSmoothing * std::max(weight_sum, 1e-12);
    const double denom = weight_sum + static_cast<double>(classes) * smoothing;
    double best = -std::numeric_limits<double>::infinity();
    std::uint8_t best_c = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (!has_class[c]) continue;
      const double prior = (params_[class_block() + c * pixels + i] + smoothing) / denom;
      const double d = feature[i] - mean[c];
      const double score = std::log(prior) + log_norm[c] - 0.5 * d * d / var[c];
      if (score > best) {
        best = score;
        best_c = static_cast<std::uint8_t>(c);
      }
    }
    labels[i] = best_c;
  }
  SegMask out(patch.rows, patch.cols, num_classes_, std::move(labels));
  return resize_nearest(out, image.extent());
}

void ReferenceSegmenter::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic("SFMD");
  w.put<std::uint32_t>(kModelVersion);
  w.str(plan_hash(plan_));
  w.str(serialize_plan(PlanDocument{{}, plan_, derive_gan_plan(plan_), {}}));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(num_classes_));
  w.floats(params_);
  w.save(path);
}

ReferenceSegmenter ReferenceSegmenter::load(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic("SFMD");
  if (r.get<std::uint32_t>() != kModelVersion) throw DataError(path.string() + ": unsupported model version");
  const std::string hash = r.str();
  const PlanDocument doc = parse_plan(r.str());
  if (plan_hash(doc.seg) != hash) throw DataError(path.string() + ": plan hash mismatch");
  ReferenceSegmenter m(doc.seg, static_cast<int>(r.get<std::uint32_t>()));
  m.set_parameters(r.floats());
  r.expect_end();
  return m;
}

ReferenceSegmenter fit_segmenter(const SegPlan& plan, int num_classes, std::span<const LabeledImage> train,
                                 const LrSchedule& schedule, const ReferenceSegmenter* init) {
  if (train.empty()) throw DataError("segmenter: empty training set");
  ReferenceSegmenter model(plan, num_classes);
  if (init != nullptr) {
    if (init->num_classes() != num_classes)
      throw DataError("fine-tune: class count " + std::to_string(num_classes) + " does not match pretrained " +
                      std::to_string(init->num_classes()));
    if (init->plan().patch_size != plan.patch_size) throw DataError("fine-tune: plan patch size differs from init");
    model = *init;
  }
  model.train(train, schedule, 0, schedule.total_epochs);
  return model;
}

ReferenceSegmenter fit_segmenter(const SegPlan& plan, int num_classes, std::span<const LabeledImage> train, int epochs,
                                 double base_rate, const ReferenceSegmenter* init) {
  if (epochs == 0) {
    if (init == nullptr) throw DataError("segmenter: zero epochs without an initial model");
    if (init->num_classes() != num_classes) throw DataError("fine-tune: class count mismatch");
    return *init;
  }
  return fit_segmenter(plan, num_classes, train, make_lr_schedule(base_rate, epochs), init);
}

std::vector<float> fedavg_round(std::span<const std::span<const float>> params, std::span<const double> weights) {
  if (params.empty() || params.size() != weights.size()) throw DataError("fedavg: need one weight per model");
  const std::size_t n = params.front().size();
  for (std::size_t m = 0; m < params.size(); ++m) {
    if (params[m].size() != n) throw DataError("fedavg: parameter vector length mismatch");
    if (!(weights[m] > 0.0)) throw DataError("fedavg: weights must be positive");
  }
  std::vector<double> sorted_w(weights.begin(), weights.end());
  std::sort(sorted_w.begin(), sorted_w.end());
  double total = 0.0;
  for (double w : sorted_w) total += w;

  std::vector<float> out(n);
  std::vector<double> terms(params.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < params.size(); ++m) terms[m] = weights[m] * static_cast<double>(params[m][i]);
    std::sort(terms.begin(), terms.end());
    double sum = 0.0;
    for (double t : terms) sum += t;
    out[i] = static_cast<float>(sum / total);
  }
  return out;
}

std::vector<float> fedavg_round(std::span<const ReferenceSegmenter* const> models, std::span<const double> weights) {
  std::vector<std::span<const float>> params;
  for (const auto* m : models) params.push_back(m->parameters());
  return fedavg_round(params, weights);
}

}  // namespace synthfed
