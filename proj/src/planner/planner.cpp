#include "synthfed/planner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "synthfed/error.hpp"
#include "synthfed/hash.hpp"

namespace synthfed {

using nlohmann::json;

AxisPair SegPlan::stride_product() const {
  AxisPair prod{1, 1};
  for (const auto& s : encoder_stages) {
    prod.row *= s.stride.row;
    prod.col *= s.stride.col;
  }
  return prod;
}

Extent SegPlan::bottleneck() const {
  const AxisPair prod = stride_product();
  return {patch_size.rows / prod.row, patch_size.cols / prod.col};
}

Extent GanPlan::latent_grid() const {
  AxisPair prod{1, 1};
  for (const auto& s : generator_stages) {
    prod.row *= s.stride.row;
    prod.col *= s.stride.col;
  }
  return {output_size.rows / prod.row, output_size.cols / prod.col};
}

namespace {

int pool_count(int median) {
  const int floor_log2 = std::bit_width(static_cast<unsigned>(median)) - 1;
  return std::clamp(floor_log2 - 2, 1, kMaxPoolings);
}

int round_up(int value, int multiple) { return (value + multiple - 1) / multiple * multiple; }

}  // namespace

SegPlan derive_seg_plan(const DatasetFingerprint& f) {
  if (f.median_size.rows < 1 || f.median_size.cols < 1) throw DataError("plan: invalid fingerprint size");
  const int d_row = pool_count(f.median_size.rows);
  const int d_col = pool_count(f.median_size.cols);
  const int depth = std::max(d_row, d_col);

  SegPlan plan;
  plan.patch_size = {round_up(f.median_size.rows, 1 << d_row), round_up(f.median_size.cols, 1 << d_col)};
  for (int s = 0; s < depth; ++s) {
    ArchStage stage;
    stage.stride = {s < d_row ? 2 : 1, s < d_col ? 2 : 1};
    const int rows_in = plan.patch_size.rows >> std::min(s, d_row);
    const int cols_in = plan.patch_size.cols >> std::min(s, d_col);
    stage.kernel = {rows_in < 3 ? 1 : 3, cols_in < 3 ? 1 : 3};
    stage.channels = std::min(plan.base_channels << s, plan.max_channels);
    plan.encoder_stages.push_back(stage);
  }
  plan.decoder_stages.assign(plan.encoder_stages.rbegin(), plan.encoder_stages.rend());
  return plan;
}

GanPlan derive_gan_plan(const SegPlan& p) { return GanPlan{p.patch_size, p.decoder_stages, p.encoder_stages}; }

TrainingBudget derive_budget(const DatasetFingerprint& f, int epochs) {
  if (f.n_images < 1) throw DataError("budget: dataset has no images");
  TrainingBudget b;
  b.n_steps_kimg = f.n_images;
  b.n_gen = 10 * f.n_images;
  b.warmup_fraction = kWarmupFraction;
  b.epochs = epochs;
  return b;
}

LrSchedule make_lr_schedule(double base_rate, int total_epochs) {
  if (!(base_rate > 0.0)) throw UsageError("lr schedule: base rate must be positive");
  if (total_epochs < 1) throw UsageError("lr schedule: need at least one epoch");
  // ceil(0.1 * total) in integers; 0.1 * 30 is 3.0000000000000004 in binary
  return LrSchedule{base_rate, total_epochs, (total_epochs + 9) / 10};
}

double lr_at(const LrSchedule& s, int epoch) {
  if (epoch < 0 || epoch >= s.total_epochs)
    throw UsageError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + ")");
  if (epoch < s.warmup_epochs) return s.base_rate * (epoch + 1) / s.warmup_epochs;
  const double progress =
      static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(s.total_epochs - s.warmup_epochs);
  return s.base_rate * std::pow(1.0 - progress, kPolyDecayExponent);
}

namespace {

json pair_json(const AxisPair& p) { return json::array({p.row, p.col}); }
AxisPair pair_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

json stages_json(const std::vector<ArchStage>& stages) {
  json out = json::array();
  for (const auto& s : stages)
    out.push_back({{"stride", pair_json(s.stride)}, {"kernel", pair_json(s.kernel)}, {"channels", s.channels}});
  return out;
}

std::vector<ArchStage> stages_from(const json& j) {
  std::vector<ArchStage> out;
  for (const auto& s : j)
    out.push_back({pair_from(s.at("stride")), pair_from(s.at("kernel")), s.at("channels").get<int>()});
  return out;
}

json seg_json(const SegPlan& p) {
  return {{"patch_size", {p.patch_size.rows, p.patch_size.cols}},
          {"encoder_stages", stages_json(p.encoder_stages)},
          {"decoder_stages", stages_json(p.decoder_stages)},
          {"base_channels", p.base_channels},
          {"max_channels", p.max_channels}};
}

json fingerprint_json(const DatasetFingerprint& f) {
  return {{"median_size", {f.median_size.rows, f.median_size.cols}},
          {"median_spacing", {f.median_spacing.row_mm, f.median_spacing.col_mm}},
          {"n_images", f.n_images},
          {"n_patients", f.n_patients},
          {"channels", f.channels},
          {"num_classes", f.num_classes}};
}

}  // namespace

PlanDocument make_plan_document(const DatasetFingerprint& f, int epochs) {
  PlanDocument doc;
  doc.fingerprint = f;
  doc.seg = derive_seg_plan(f);
  doc.gan = derive_gan_plan(doc.seg);
  doc.budget = derive_budget(f, epochs);
  return doc;
}

std::string serialize_fingerprint(const DatasetFingerprint& f) { return fingerprint_json(f).dump(2); }

std::string serialize_plan(const PlanDocument& doc) {
  const json j{{"fingerprint", fingerprint_json(doc.fingerprint)},
               {"seg_plan", seg_json(doc.seg)},
               {"gan_plan",
                {{"output_size", {doc.gan.output_size.rows, doc.gan.output_size.cols}},
                 {"generator_stages", stages_json(doc.gan.generator_stages)},
                 {"discriminator_stages", stages_json(doc.gan.discriminator_stages)}}},
               {"budget",
                {{"n_steps_kimg", doc.budget.n_steps_kimg},
                 {"n_gen", doc.budget.n_gen},
                 {"warmup_fraction", doc.budget.warmup_fraction},
                 {"epochs", doc.budget.epochs}}},
               {"plan_hash", plan_hash(doc.seg)}};
  return j.dump(2) + "\n";
}

PlanDocument parse_plan(const std::string& text) {
  try {
    const json j = json::parse(text);
    PlanDocument doc;
    const auto& f = j.at("fingerprint");
    doc.fingerprint.median_size = {f.at("median_size").at(0).get<int>(), f.at("median_size").at(1).get<int>()};
    doc.fingerprint.median_spacing = {f.at("median_spacing").at(0).get<double>(),
                                      f.at("median_spacing").at(1).get<double>()};
    doc.fingerprint.n_images = f.at("n_images").get<std::size_t>();
    doc.fingerprint.n_patients = f.at("n_patients").get<std::size_t>();
    doc.fingerprint.channels = f.at("channels").get<int>();
    doc.fingerprint.num_classes = f.at("num_classes").get<int>();
    const auto& s = j.at("seg_plan");
    doc.seg.patch_size = {s.at("patch_size").at(0).get<int>(), s.at("patch_size").at(1).get<int>()};
    doc.seg.encoder_stages = stages_from(s.at("encoder_stages"));
    doc.seg.decoder_stages = stages_from(s.at("decoder_stages"));
    doc.seg.base_channels = s.at("base_channels").get<int>();
    doc.seg.max_channels = s.at("max_channels").get<int>();
    const auto& g = j.at("gan_plan");
    doc.gan.output_size = {g.at("output_size").at(0).get<int>(), g.at("output_size").at(1).get<int>()};
    doc.gan.generator_stages = stages_from(g.at("generator_stages"));
    doc.gan.discriminator_stages = stages_from(g.at("discriminator_stages"));
    const auto& b = j.at("budget");
    doc.budget.n_steps_kimg = b.at("n_steps_kimg").get<std::size_t>();
    doc.budget.n_gen = b.at("n_gen").get<std::size_t>();
    doc.budget.warmup_fraction = b.at("warmup_fraction").get<double>();
    doc.budget.epochs = b.at("epochs").get<int>();
    return doc;
  } catch (const json::exception& e) {
    throw DataError(std::string("plan.json: ") + e.what());
  }
}

std::string plan_hash(const SegPlan& p) { return sha256_hex(seg_json(p).dump()); }

}  // namespace synthfed
