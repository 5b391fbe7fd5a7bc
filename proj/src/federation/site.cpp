#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <nlohmann/json.hpp>
#include <set>

#include "core/fs_util.hpp"
#include "federation/labeled.hpp"
#include "synthfed/embedding.hpp"
#include "synthfed/error.hpp"
#include "synthfed/federation.hpp"
#include "synthfed/hash.hpp"
#include "synthfed/planner.hpp"
#include "synthfed/rng.hpp"

namespace synthfed {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<Arm, 7> kArms = {Arm::Real,     Arm::SynAll,       Arm::SynReal, Arm::RealAll,
                                      Arm::SynLocal, Arm::SynLocalReal, Arm::FedAvg};
constexpr std::array<std::string_view, 7> kArmNames = {"real",      "syn-all",        "syn-real", "real-all",
                                                       "syn-local", "syn-local-real", "fedavg"};

std::vector<Image2D> images_of(const Dataset& d) {
  std::vector<Image2D> out;
  for (const Item* item : d.items()) out.push_back(item->image);
  return out;
}

PlanDocument site_plan(const Dataset& train, const FederationConfig& cfg) {
  PlanDocument doc = make_plan_document(fingerprint_dataset(train), cfg.epochs);
  if (cfg.n_steps_override) doc.budget.n_steps_kimg = *cfg.n_steps_override;
  if (cfg.n_gen_override) doc.budget.n_gen = *cfg.n_gen_override;
  return doc;
}

PlanDocument read_plan(const fs::path& dir) { return parse_plan(fsutil::read_text(dir / "plan.json")); }

void fingerprint_phase(const SiteContext& s) {
  fsutil::write_text_atomic(s.dir / "fingerprint.json", serialize_fingerprint(fingerprint_dataset(s.train)) + "\n");
}

void plan_phase(const SiteContext& s, const FederationConfig& cfg) {
  const std::string recorded = fsutil::read_text(s.dir / "fingerprint.json");
  const PlanDocument doc = site_plan(s.train, cfg);
  if (serialize_fingerprint(doc.fingerprint) + "\n" != recorded)
    throw DataError("site " + s.train.site_id + ": local data no longer matches fingerprint.json");
  fsutil::write_text_atomic(s.dir / "plan.json", serialize_plan(doc) + "\n");
}

void train_phase(const SiteContext& s, const FederationConfig& cfg) {
  const PlanDocument doc = read_plan(s.dir);
  ReferenceGenerator generator(doc.gan, doc.budget, generator_seed(cfg, s.train.site_id, s.fold), cfg.generator);
  generator.fit(images_of(s.train));
  generator.save(s.dir / "generator.bin");
  const auto train = detail::labeled(s.train);
  fit_segmenter(doc.seg, s.train.num_classes, train, cfg.epochs, cfg.base_rate).save(s.dir / "segmenter.bin");
}

void synthesize_phase(const SiteContext& s, const FederationConfig& cfg) {
  const PlanDocument doc = read_plan(s.dir);
  const ReferenceGenerator generator = ReferenceGenerator::load(s.dir / "generator.bin");
  std::vector<Image2D> samples;
  for (auto& image : generator.sample(doc.budget.n_gen, sample_seed(cfg, s.train.site_id, s.fold)))
    samples.emplace_back(image.height(), image.width(), image.channels(),
                         std::vector<float>(image.pixels().begin(), image.pixels().end()),
                         doc.fingerprint.median_spacing);
  save_samples(s.dir / "samples.bin", samples);
}

void filter_phase(const SiteContext& s, const FederationConfig& cfg) {
  const std::vector<Image2D> samples = load_samples(s.dir / "samples.bin");
  if (samples.empty()) throw DataError("site " + s.train.site_id + ": no synthetic samples to filter");
  const ToyEmbeddingProvider provider;
  const EmbeddingSet real = embed_dataset(s.train, provider);
  std::vector<ImageRef> refs;
  for (std::size_t i = 0; i < samples.size(); ++i) refs.push_back({sample_ref(s.train.site_id, i), &samples[i]});
  const EmbeddingSet synthetic = embed_dataset(refs, provider);
  const std::uint64_t seed = calibration_seed(cfg, s.train.site_id, s.fold);
  const PatientSplit split = split_patients(s.train, seed);
  const ThresholdCalibration cal = calibrate_threshold(real, split, cfg.percentile, seed, cfg.workers);
  const MemorizationReport report = filter_synthetic(synthetic, real, cal, cfg.workers);
  fsutil::write_text_atomic(s.dir / "filter_report.csv", report.to_csv());
  const json calibration{{"provider", provider.name()},      {"percentile", cal.p},
                         {"split_seed", cal.split_seed},     {"n_distances", cal.distances.size()},
                         {"threshold", cal.threshold},       {"n_total", report.n_total},
                         {"n_discarded", report.n_discarded}};
  fsutil::write_text_atomic(s.dir / "calibration.json", calibration.dump(2) + "\n");
}

void publish_phase(const SiteContext& s, const FederationConfig& cfg) {
  const PlanDocument doc = read_plan(s.dir);
  const std::vector<Image2D> samples = load_samples(s.dir / "samples.bin");
  const json calibration = fsutil::read_json_file(s.dir / "calibration.json");
  const ReferenceSegmenter local = ReferenceSegmenter::load(s.dir / "segmenter.bin");
  const BundleProvenance provenance{generator_seed(cfg, s.train.site_id, s.fold), doc.budget.n_steps_kimg,
                                    doc.budget.n_gen, plan_hash(doc.seg), kReferenceGeneratorId};
  SyntheticBundle bundle = assemble_bundle(
      *s.local, samples, fsutil::read_text(s.dir / "filter_report.csv"), calibration.at("threshold").get<double>(),
      calibration.at("percentile").get<double>(), local, provenance, doc.fingerprint.median_spacing);
  publish_bundle(bundle, s.dir / "bundle");
}

void finetune_phase(const SiteContext& s, const FederationConfig& cfg, const fs::path& general_model) {
  if (general_model.empty()) throw DataError("site " + s.train.site_id + ": no general model to fine-tune");
  const ReferenceSegmenter general = ReferenceSegmenter::load(general_model);
  finetune_at_site(general, s.train, cfg).save(s.dir / "finetuned.bin");
}

}  // namespace

std::string sample_ref(const std::string& site_id, std::size_t index) {
  return fmt::format("{}-syn{:05d}", site_id, index);
}

SyntheticBundle assemble_bundle(const Dataset& local, std::span<const Image2D> samples, const std::string& report_csv,
                                double threshold, double percentile, const ReferenceSegmenter& labeler,
                                const BundleProvenance& provenance, Spacing spacing) {
  const MemorizationReport report = parse_memorization_csv(report_csv);
  if (report.entries.size() != samples.size())
    throw DataError(fmt::format("site {}: filter report has {} rows for {} samples", local.site_id,
                                report.entries.size(), samples.size()));
  if (labeler.num_classes() != local.num_classes)
    throw DataError("site " + local.site_id + ": segmenter class count differs from the local data");
  SyntheticBundle bundle;
  bundle.site_id = local.site_id;
  bundle.modality = local.modality;
  bundle.num_classes = local.num_classes;
  bundle.spacing = spacing;
  bundle.provenance = provenance;
  bundle.filter_report_csv = report_csv;
  bundle.threshold = threshold;
  bundle.percentile = percentile;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& e = report.entries[i];
    if (e.image_ref != sample_ref(local.site_id, i))
      throw DataError("site " + local.site_id + ": filter report out of sample order at " + e.image_ref);
    if (e.verdict != Verdict::Kept) continue;
    bundle.images.push_back(samples[i]);
    // masks come from the real-data segmenter, never from the generator
    bundle.masks.push_back(labeler.predict(samples[i]));
    bundle.sources.push_back(e.image_ref);
  }
  check_no_real_images(bundle, local);
  return bundle;
}

std::string_view arm_name(Arm arm) { return kArmNames.at(static_cast<std::size_t>(arm)); }

std::optional<Arm> parse_arm(std::string_view name) {
  for (std::size_t i = 0; i < kArmNames.size(); ++i)
    if (kArmNames[i] == name) return kArms[i];
  return std::nullopt;
}

std::vector<Arm> all_arms() { return {kArms.begin(), kArms.end()}; }

void validate_arms(std::span<const Arm> arms) {
  std::set<Arm> seen;
  for (Arm a : arms)
    if (!seen.insert(a).second) throw UsageError(fmt::format("arm '{}' listed twice", arm_name(a)));
  if (seen.count(Arm::SynLocalReal) && !seen.count(Arm::SynLocal))
    throw UsageError("arm 'syn-local-real' needs the 'syn-local' pretraining arm");
}

bool FederationConfig::wants(Arm a) const { return std::find(arms.begin(), arms.end(), a) != arms.end(); }

std::uint64_t fold_seed(const FederationConfig& cfg, const std::string& site_id) {
  return derive_seed(cfg.seed, "folds:" + site_id);
}
std::uint64_t generator_seed(const FederationConfig& cfg, const std::string& site_id, int fold) {
  return derive_seed(cfg.seed, "generator:" + site_id, static_cast<std::uint64_t>(fold));
}
std::uint64_t sample_seed(const FederationConfig& cfg, const std::string& site_id, int fold) {
  return derive_seed(cfg.seed, "sample:" + site_id, static_cast<std::uint64_t>(fold));
}
std::uint64_t calibration_seed(const FederationConfig& cfg, const std::string& site_id, int fold) {
  return derive_seed(cfg.seed, "calibration:" + site_id, static_cast<std::uint64_t>(fold));
}

SiteContext make_site_context(const Dataset& local, int fold, const FederationConfig& cfg, const fs::path& dir) {
  if (fold < 0 || fold >= kFoldCount) throw UsageError(fmt::format("fold {} out of range 0..{}", fold, kFoldCount - 1));
  SiteContext s;
  s.local = &local;
  s.split = make_fold_splits(local, fold_seed(cfg, local.site_id)).at(static_cast<std::size_t>(fold));
  s.train = subset(local, s.split.train_patients);
  s.test = subset(local, s.split.test_patients);
  s.fold = fold;
  s.dir = dir;
  return s;
}

std::vector<std::string> site_phase_artifacts(SitePhase phase) {
  switch (phase) {
    case SitePhase::Idle:
      return {};
    case SitePhase::Fingerprinted:
      return {"fingerprint.json"};
    case SitePhase::Planned:
      return {"plan.json"};
    case SitePhase::GenTrained:
      return {"generator.bin", "segmenter.bin"};
    case SitePhase::Synthesized:
      return {"samples.bin"};
    case SitePhase::Filtered:
      return {"filter_report.csv", "calibration.json"};
    case SitePhase::BundlePublished:
    case SitePhase::AwaitingGeneralModel:
      return {"bundle/manifest.json", "bundle/filter_report.csv"};
    case SitePhase::FineTuned:
      return {"finetuned.bin"};
  }
  return {};
}

void run_site_phase(SitePhase phase, const SiteContext& site, const FederationConfig& cfg,
                    const fs::path& general_model) {
  fs::create_directories(site.dir);
  switch (phase) {
    case SitePhase::Idle:
      return;
    case SitePhase::Fingerprinted:
      return fingerprint_phase(site);
    case SitePhase::Planned:
      return plan_phase(site, cfg);
    case SitePhase::GenTrained:
      return train_phase(site, cfg);
    case SitePhase::Synthesized:
      return synthesize_phase(site, cfg);
    case SitePhase::Filtered:
      return filter_phase(site, cfg);
    case SitePhase::BundlePublished:
      return publish_phase(site, cfg);
    case SitePhase::AwaitingGeneralModel:
      // the published bundle must still validate while the site waits
      load_bundle(site.dir / "bundle");
      return;
    case SitePhase::FineTuned:
      return finetune_phase(site, cfg, general_model);
  }
}

SyntheticBundle run_site_pipeline(const SiteContext& site, const FederationConfig& cfg) {
  SiteState state{site.train.site_id, SitePhase::Idle};
  for (SitePhase p : {SitePhase::Fingerprinted, SitePhase::Planned, SitePhase::GenTrained, SitePhase::Synthesized,
                      SitePhase::Filtered, SitePhase::BundlePublished}) {
    state.advance(p);
    run_site_phase(p, site, cfg);
  }
  return load_bundle(site.dir / "bundle");
}

std::string artifact_hash(const fs::path& base, std::span<const std::string> files) {
  Sha256 h;
  for (const auto& f : files) {
    if (!fs::exists(base / f)) throw DataError("missing artifact " + (base / f).string());
    h.update(f + " " + sha256_file(base / f) + "\n");
  }
  return h.digest();
}

}  // namespace synthfed
