#include <fmt/format.h>

#include <algorithm>

#include "federation/labeled.hpp"
#include "synthfed/error.hpp"
#include "synthfed/federation.hpp"
#include "synthfed/metrics.hpp"
#include "synthfed/planner.hpp"

namespace synthfed {

ReferenceSegmenter pretrain_general(const MergedSynthetic& merged, const FederationConfig& cfg) {
  if (merged.data.image_count() == 0) throw DataError("pretrain: the merged synthetic set is empty");
  const SegPlan plan = derive_seg_plan(fingerprint_dataset(merged.data));
  const auto train = detail::labeled(merged.data);
  return fit_segmenter(plan, merged.data.num_classes, train, cfg.epochs, cfg.base_rate);
}

ReferenceSegmenter finetune_at_site(const ReferenceSegmenter& general, const Dataset& local_train,
                                    const FederationConfig& cfg) {
  if (general.num_classes() != local_train.num_classes)
    throw DataError(fmt::format("fine-tune at {}: general model has {} classes, local data {}", local_train.site_id,
                                general.num_classes(), local_train.num_classes));
  const auto train = detail::labeled(local_train);
  return fit_segmenter(general.plan(), general.num_classes(), train, cfg.finetune_epochs, cfg.base_rate, &general);
}

Dataset pool_datasets(std::span<const Dataset* const> parts, const std::string& site_id) {
  if (parts.empty()) throw DataError("pool: no datasets");
  Dataset out{site_id, parts.front()->modality, parts.front()->num_classes, {}};
  for (const Dataset* d : parts) {
    if (d->num_classes != out.num_classes) throw DataError("pool: class-count inconsistency across sites");
    if (d->modality != out.modality) out.modality = "mixed";
    for (const auto& p : d->patients) {
      PatientRecord copy = p;
      copy.id = d->site_id + ":" + p.id;
      for (auto& item : copy.items) item.ref = d->site_id + ":" + item.ref;
      out.patients.push_back(std::move(copy));
    }
  }
  std::sort(out.patients.begin(), out.patients.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
  validate_dataset(out);
  return out;
}

ReferenceSegmenter run_fedavg(std::span<const Dataset* const> site_trains, const SegPlan& plan, int num_classes,
                              int rounds, double base_rate) {
  if (site_trains.empty()) throw DataError("fedavg: no sites");
  if (rounds < 1) throw UsageError("fedavg: need at least one round");
  std::vector<std::vector<LabeledImage>> data;
  std::vector<double> weights;
  for (const Dataset* d : site_trains) {
    data.push_back(detail::labeled(*d));
    weights.push_back(static_cast<double>(d->image_count()));
  }
  const LrSchedule schedule = make_lr_schedule(base_rate, rounds);
  ReferenceSegmenter global(plan, num_classes);
  for (int r = 0; r < rounds; ++r) {
    std::vector<ReferenceSegmenter> local(site_trains.size(), global);
    std::vector<const ReferenceSegmenter*> ptrs;
    for (std::size_t k = 0; k < local.size(); ++k) {
      local[k].train(data[k], schedule, r, 1);
      ptrs.push_back(&local[k]);
    }
    global.set_parameters(fedavg_round(ptrs, weights));
  }
  return global;
}

std::vector<MetricRow> evaluate_model(const ReferenceSegmenter& model, const Dataset& test, const std::string& setting,
                                      int fold) {
  if (test.image_count() == 0) throw DataError("evaluate: empty test set for " + test.site_id);
  if (model.num_classes() != test.num_classes)
    throw DataError(fmt::format("evaluate {} on {}: class count mismatch", setting, test.site_id));
  double dice_sum = 0.0;
  std::size_t dice_n = 0;
  double hd_sum = 0.0;
  std::size_t hd_n = 0;
  for (const auto& patient : test.patients) {
    for (const auto& item : patient.items) {
      if (!item.mask) throw DataError("evaluate: test image " + item.ref + " has no mask");
      const SegMask predicted = model.predict(item.image);
      double d = 0.0;
      double h = 0.0;
      int h_defined = 0;
      for (int c = 1; c <= test.num_classes; ++c) {
        d += dice(*item.mask, predicted, c);
        if (auto v = hd95(*item.mask, predicted, c, patient.spacing)) {
          h += *v;
          ++h_defined;
        }
      }
      dice_sum += 100.0 * d / test.num_classes;
      ++dice_n;
      if (h_defined > 0) {
        hd_sum += h / h_defined;
        ++hd_n;
      }
    }
  }
  std::vector<MetricRow> rows;
  rows.push_back({setting, test.site_id, std::string(kDiceMetric), fold, dice_sum / static_cast<double>(dice_n)});
  rows.push_back({setting, test.site_id, std::string(kHd95Metric), fold,
                  hd_n ? std::optional<double>(hd_sum / static_cast<double>(hd_n)) : std::nullopt});
  return rows;
}

}  // namespace synthfed
