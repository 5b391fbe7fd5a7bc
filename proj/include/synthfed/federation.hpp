#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthfed/bundle.hpp"
#include "synthfed/core.hpp"
#include "synthfed/event_log.hpp"
#include "synthfed/generator.hpp"
#include "synthfed/memfilter.hpp"
#include "synthfed/report.hpp"
#include "synthfed/segmenter.hpp"

namespace synthfed {

/// Training settings that can be evaluated. real: local real data only;
/// syn-all: the general model trained on all bundles; syn-real: the general
/// model fine-tuned on local real data; real-all: pooled real data (a
/// non-private reference); syn-local / syn-local-real: the same two steps
/// with the site's own bundle only; fedavg: parameter averaging baseline.
enum class Arm { Real, SynAll, SynReal, RealAll, SynLocal, SynLocalReal, FedAvg };

std::string_view arm_name(Arm arm);
std::optional<Arm> parse_arm(std::string_view name);
std::vector<Arm> all_arms();
/// Throws UsageError for duplicates or an arm whose prerequisite is missing
/// (syn-local-real needs syn-local).
void validate_arms(std::span<const Arm> arms);

struct FederationConfig {
  std::string run_name = "run";
  std::uint64_t seed = 0;
  double percentile = kDefaultPercentile;
  int epochs = 50;  // local, general and baseline segmenters
  int finetune_epochs = 50;
  double base_rate = 1.0;
  int fedavg_rounds = 10;
  std::size_t workers = 1;
  GeneratorConfig generator;
  std::optional<std::size_t> n_steps_override;  // kimg
  std::optional<std::size_t> n_gen_override;
  std::vector<Arm> arms = all_arms();

  bool wants(Arm a) const;
};

struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path site_dir(const std::string& site_id) const { return root / "sites" / site_id; }
  std::filesystem::path central_dir() const { return root / "central"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path events_path() const { return root / "events.log"; }
};

/// One site's view of one fold.
struct SiteContext {
  const Dataset* local = nullptr;  // the whole local dataset
  Dataset train;                   // training patients of the fold
  Dataset test;                    // test patients of the fold
  FoldSplit split;
  int fold = 0;
  std::filesystem::path dir;
};

SiteContext make_site_context(const Dataset& local, int fold, const FederationConfig& cfg,
                              const std::filesystem::path& dir);

/// Stream seeds, derived from the run seed and the site id (never from the
/// site's position in a list).
std::uint64_t fold_seed(const FederationConfig& cfg, const std::string& site_id);
std::uint64_t generator_seed(const FederationConfig& cfg, const std::string& site_id, int fold);
std::uint64_t sample_seed(const FederationConfig& cfg, const std::string& site_id, int fold);
std::uint64_t calibration_seed(const FederationConfig& cfg, const std::string& site_id, int fold);

/// Files (relative to the site directory) a site phase produces.
std::vector<std::string> site_phase_artifacts(SitePhase phase);

/// Executes one site phase, reading inputs from the artifacts of earlier
/// phases in `site.dir`. FineTuned additionally needs `general_model`.
void run_site_phase(SitePhase phase, const SiteContext& site, const FederationConfig& cfg,
                    const std::filesystem::path& general_model = {});

/// fingerprint -> plan -> generator + local segmenter -> samples -> filter ->
/// bundle, for a single site outside any run directory bookkeeping.
/// Returns the published bundle.
SyntheticBundle run_site_pipeline(const SiteContext& site, const FederationConfig& cfg);

/// Builds a site's bundle: keeps the samples the filter report marks kept
/// (report rows must follow sample order, refs as in `sample_ref`), labels
/// them with the site's real-data segmenter and checks that none is a copy of
/// a real image of `local`.
SyntheticBundle assemble_bundle(const Dataset& local, std::span<const Image2D> samples, const std::string& report_csv,
                                double threshold, double percentile, const ReferenceSegmenter& labeler,
                                const BundleProvenance& provenance, Spacing spacing);

/// "<site>-syn00042": the ref of the 42nd synthetic sample of a site.
std::string sample_ref(const std::string& site_id, std::size_t index);

/// SHA-256 over "<relative path> <file sha256>" lines.
std::string artifact_hash(const std::filesystem::path& base, std::span<const std::string> files);

/// Plan re-derived from the merged synthetic fingerprint; trained for the
/// full epoch budget.
ReferenceSegmenter pretrain_general(const MergedSynthetic& merged, const FederationConfig& cfg);

/// Continues training `general` on the local real training data with a fresh
/// warm-up schedule.
ReferenceSegmenter finetune_at_site(const ReferenceSegmenter& general, const Dataset& local_train,
                                    const FederationConfig& cfg);

/// Pools the training patients of several sites (patient ids prefixed with
/// the site id).
Dataset pool_datasets(std::span<const Dataset* const> parts, const std::string& site_id);

/// `rounds` communication rounds from an all-zero model; each round every
/// site trains one epoch (rate lr_at(round)) from the global parameters, then
/// the results are averaged with weights equal to local image counts.
ReferenceSegmenter run_fedavg(std::span<const Dataset* const> site_trains, const SegPlan& plan, int num_classes,
                              int rounds, double base_rate);

/// Per test image: Dice x100 averaged over classes and HD95 averaged over
/// classes where defined; the fold value is the mean over test images.
std::vector<MetricRow> evaluate_model(const ReferenceSegmenter& model, const Dataset& test, const std::string& setting,
                                      int fold);

struct FederationRun {
  std::string run_id;
  std::vector<std::string> sites;
  int fold = 0;
  std::filesystem::path merged_manifest;
  std::filesystem::path general_model;
  std::map<std::string, std::filesystem::path> finetuned;
  std::filesystem::path event_log;
  std::vector<MetricRow> rows;
};

/// Runs or resumes one fold. Completed steps found in events.log are
/// verified against their recorded artifact hash and skipped, so re-running
/// a finished run rewrites nothing. Sites are processed in id order.
FederationRun run_federation(std::span<const Dataset> sites, int fold, const FederationConfig& cfg,
                             const RunLayout& layout);

struct ExperimentPlan {
  FederationConfig federation;
  std::vector<int> folds{0, 1, 2, 3, 4};
  std::vector<int> scaling_site_counts;  // empty: no scaling runs
  double alpha = 0.01;
  std::filesystem::path output;
};

struct ScalingPoint {
  int n_sites = 0;
  int fold = 0;
  double delta_ds = 0.0;
};

struct ExperimentReport {
  std::vector<MetricRow> rows;
  std::vector<ComparisonTest> tests;
  std::string summary_table;
  std::string stats_table;
  std::vector<ScalingPoint> scaling;
  std::map<int, double> scaling_mean;  // n_sites -> mean delta DS over folds
};

/// All folds of the main run under output/run/<name>-f<k>/, experiment
/// reports under output/reports/, and one run per (N, fold) under
/// output/scaling/ using the first N sites in id order.
ExperimentReport run_experiment(const ExperimentPlan& plan, std::span<const Dataset> sites);

std::string scaling_to_csv(std::span<const ScalingPoint> points);

}  // namespace synthfed
