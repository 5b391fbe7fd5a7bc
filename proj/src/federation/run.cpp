#include <fmt/format.h>

#include <algorithm>
#include <exception>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>

#include "core/fs_util.hpp"
#include "federation/labeled.hpp"
#include "synthfed/error.hpp"
#include "synthfed/federation.hpp"
#include "synthfed/hash.hpp"
#include "synthfed/parallel.hpp"
#include "synthfed/planner.hpp"

namespace synthfed {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kReservedIds = {"central", "merged", "all"};

// Logical steps of the protocol; events.log is ordered by (step, site).
enum Step : std::uint64_t {
  kMergedStep = 8,
  kPretrainedStep = 9,
  kFineTunedStep = 10,
  kSynLocalStep = 11,
  kSynLocalRealStep = 12,
  kCentralArmStep = 13,
  kEvaluatedStep = 14,
};

struct Task {
  std::string site;   // events.log site column
  std::string label;  // events.log phase column
  fs::path base;
  std::vector<std::string> files;
  std::function<void()> run;
};

void write_if_changed(const fs::path& path, const std::string& text) {
  if (fs::exists(path) && fsutil::read_text(path) == text) return;
  fsutil::write_text_atomic(path, text);
}

// Runs the tasks of one step that events.log does not list yet; tasks that
// are listed must still match their recorded artifact hash.
void run_step(EventLog& log, std::uint64_t step, std::vector<Task> tasks, std::size_t workers) {
  std::stable_sort(tasks.begin(), tasks.end(), [](const Task& a, const Task& b) { return a.site < b.site; });
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Event* done = log.find(tasks[i].site, tasks[i].label);
    if (!done) {
      todo.push_back(i);
      continue;
    }
    if (artifact_hash(tasks[i].base, tasks[i].files) != done->artifact_hash)
      throw DataError(fmt::format("{} {}: artifacts changed since they were logged", tasks[i].site, tasks[i].label));
  }
  std::vector<std::string> hashes(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
  parallel_for(todo.size(), workers, [&](std::size_t k) {
    try {
      const Task& t = tasks[todo[k]];
      t.run();
      hashes[k] = artifact_hash(t.base, t.files);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  });
  // completed tasks are logged even when a sibling failed, so a rerun resumes
  // from the failure
  for (std::size_t k = 0; k < todo.size(); ++k)
    if (!errors[k]) log.append({step, tasks[todo[k]].site, tasks[todo[k]].label, hashes[k], {}});
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::string> central_files(std::initializer_list<const char*> names) {
  return {names.begin(), names.end()};
}

}  // namespace

FederationRun run_federation(std::span<const Dataset> sites, int fold, const FederationConfig& cfg,
                             const RunLayout& layout) {
  validate_arms(cfg.arms);
  if (sites.empty()) throw UsageError("federation: no sites");
  std::vector<const Dataset*> ordered;
  for (const auto& d : sites) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(), [](const Dataset* a, const Dataset* b) { return a->site_id < b->site_id; });
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const std::string& id = ordered[i]->site_id;
    if (kReservedIds.count(id)) throw UsageError("site id '" + id + "' is reserved");
    if (id.find_first_of("/\\\t\n ,:") != std::string::npos)
      throw UsageError("site id '" + id + "' has bad characters");
    if (i > 0 && ordered[i - 1]->site_id == id) throw UsageError("duplicate site id '" + id + "'");
  }

  fs::create_directories(layout.root);
  EventLog log(layout.events_path());
  std::vector<SiteContext> ctx;
  for (const Dataset* d : ordered) ctx.push_back(make_site_context(*d, fold, cfg, layout.site_dir(d->site_id)));

  FederationRun run;
  run.run_id = layout.root.filename().string();
  run.fold = fold;
  run.event_log = layout.events_path();
  for (const Dataset* d : ordered) run.sites.push_back(d->site_id);

  auto site_tasks = [&](SitePhase phase, const fs::path& general_model) {
    std::vector<Task> tasks;
    for (const auto& s : ctx)
      tasks.push_back({s.train.site_id, std::string(phase_name(phase)), s.dir, site_phase_artifacts(phase),
                       [&s, &cfg, phase, general_model] { run_site_phase(phase, s, cfg, general_model); }});
    return tasks;
  };

  // sites work independently up to the bundle barrier
  for (SitePhase phase : {SitePhase::Fingerprinted, SitePhase::Planned, SitePhase::GenTrained, SitePhase::Synthesized,
                          SitePhase::Filtered, SitePhase::BundlePublished, SitePhase::AwaitingGeneralModel})
    run_step(log, static_cast<std::uint64_t>(phase), site_tasks(phase, {}), cfg.workers);

  const fs::path central = layout.central_dir();
  const fs::path merged_dir = central / "merged";
  std::vector<fs::path> bundle_dirs;
  for (const auto& s : ctx) bundle_dirs.push_back(s.dir / "bundle");

  run_step(log, kMergedStep,
           {{"central", "Merged", central, central_files({"merged/manifest.json"}),
             [&] { write_merged(bundle_dirs, merged_dir); }}},
           1);
  run_step(log, kPretrainedStep,
           {{"central", "Pretrained", central, central_files({"general_model.bin", "general_model.json"}),
             [&] {
               const MergedSynthetic merged = load_merged(merged_dir);
               const ReferenceSegmenter general = pretrain_general(merged, cfg);
               general.save(central / "general_model.bin");
               const json provenance{{"plan_hash", plan_hash(general.plan())},
                                     {"merged_manifest_sha256", sha256_hex(merged.manifest_json)},
                                     {"n_items", merged.data.image_count()},
                                     {"epochs", cfg.epochs},
                                     {"base_rate", cfg.base_rate}};
               fsutil::write_text_atomic(central / "general_model.json", provenance.dump(2) + "\n");
             }}},
           1);
  run.merged_manifest = merged_dir / "manifest.json";
  run.general_model = central / "general_model.bin";

  // the general model is copied to every site and fine-tuned there
  run_step(log, kFineTunedStep, site_tasks(SitePhase::FineTuned, run.general_model), cfg.workers);
  for (const auto& s : ctx) run.finetuned[s.train.site_id] = s.dir / "finetuned.bin";

  if (cfg.wants(Arm::SynLocal)) {
    std::vector<Task> tasks;
    for (const auto& s : ctx)
      tasks.push_back({s.train.site_id, "arm:syn-local", s.dir, {"syn_local.bin"}, [&s, &cfg] {
                         const fs::path own[] = {s.dir / "bundle"};
                         pretrain_general(merge_bundles(own, s.dir), cfg).save(s.dir / "syn_local.bin");
                       }});
    run_step(log, kSynLocalStep, std::move(tasks), cfg.workers);
  }
  if (cfg.wants(Arm::SynLocalReal)) {
    std::vector<Task> tasks;
    for (const auto& s : ctx)
      tasks.push_back({s.train.site_id, "arm:syn-local-real", s.dir, {"syn_local_real.bin"}, [&s, &cfg] {
                         const ReferenceSegmenter base = ReferenceSegmenter::load(s.dir / "syn_local.bin");
                         finetune_at_site(base, s.train, cfg).save(s.dir / "syn_local_real.bin");
                       }});
    run_step(log, kSynLocalRealStep, std::move(tasks), cfg.workers);
  }

  std::vector<const Dataset*> trains;
  for (const auto& s : ctx) trains.push_back(&s.train);
  std::vector<Task> central_arms;
  if (cfg.wants(Arm::RealAll))
    central_arms.push_back(
        {"central", "arm:real-all", central, {"real_all.bin"}, [&] {
           const Dataset pooled = pool_datasets(trains, "real-all");
           const SegPlan plan = derive_seg_plan(fingerprint_dataset(pooled));
           const auto data = detail::labeled(pooled);
           fit_segmenter(plan, pooled.num_classes, data, cfg.epochs, cfg.base_rate).save(central / "real_all.bin");
         }});
  if (cfg.wants(Arm::FedAvg))
    central_arms.push_back(
        {"central", "arm:fedavg", central, {"fedavg.bin"}, [&] {
           // sites agree on the plan derived from their pooled fingerprint;
           // only summary statistics leave a site for this
           const Dataset pooled = pool_datasets(trains, "fedavg");
           const SegPlan plan = derive_seg_plan(fingerprint_dataset(pooled));
           run_fedavg(trains, plan, pooled.num_classes, cfg.fedavg_rounds, cfg.base_rate).save(central / "fedavg.bin");
         }});
  if (!central_arms.empty()) run_step(log, kCentralArmStep, std::move(central_arms), 1);

  const fs::path metrics_path = layout.reports_dir() / "metrics.csv";
  run_step(
      log, kEvaluatedStep,
      {{"central",
        "Evaluated",
        layout.root,
        {"reports/metrics.csv", "reports/summary.txt"},
        [&] {
          std::vector<std::pair<std::string, fs::path>> models;
          for (const auto& s : ctx) {
            const std::string& id = s.train.site_id;
            if (cfg.wants(Arm::Real)) models.emplace_back("real-" + id, s.dir / "segmenter.bin");
            if (cfg.wants(Arm::SynReal)) models.emplace_back("syn-real-" + id, s.dir / "finetuned.bin");
            if (cfg.wants(Arm::SynLocal)) models.emplace_back("syn-local-" + id, s.dir / "syn_local.bin");
            if (cfg.wants(Arm::SynLocalReal)) models.emplace_back("syn-local-real-" + id, s.dir / "syn_local_real.bin");
          }
          if (cfg.wants(Arm::SynAll)) models.emplace_back("syn-all", central / "general_model.bin");
          if (cfg.wants(Arm::RealAll)) models.emplace_back("real-all", central / "real_all.bin");
          if (cfg.wants(Arm::FedAvg)) models.emplace_back("fedavg", central / "fedavg.bin");

          std::vector<std::vector<MetricRow>> per_model(models.size());
          parallel_for(models.size(), cfg.workers, [&](std::size_t m) {
            if (!fs::exists(models[m].second))
              throw DataError("evaluate: missing artifact for " + models[m].first + ": " + models[m].second.string());
            const ReferenceSegmenter model = ReferenceSegmenter::load(models[m].second);
            for (const auto& s : ctx) {
              auto rows = evaluate_model(model, s.test, models[m].first, fold);
              per_model[m].insert(per_model[m].end(), rows.begin(), rows.end());
            }
          });
          std::vector<MetricRow> rows;
          for (auto& r : per_model) rows.insert(rows.end(), r.begin(), r.end());
          sort_rows(rows);
          fs::create_directories(layout.reports_dir());
          fsutil::write_text_atomic(metrics_path, metrics_to_csv(rows));
          fsutil::write_text_atomic(layout.reports_dir() / "summary.txt", render_summary_table(rows));
        }}},
      1);
  run.rows = metrics_from_csv(fsutil::read_text(metrics_path));
  return run;
}

ExperimentReport run_experiment(const ExperimentPlan& plan, std::span<const Dataset> sites) {
  if (plan.output.empty()) throw UsageError("experiment: no output directory");
  std::set<int> seen;
  for (int f : plan.folds) {
    if (f < 0 || f >= kFoldCount) throw UsageError(fmt::format("experiment: fold {} out of range", f));
    if (!seen.insert(f).second) throw UsageError(fmt::format("experiment: fold {} listed twice", f));
  }
  if (plan.folds.empty()) throw UsageError("experiment: no folds");
  for (int n : plan.scaling_site_counts)
    if (n < 1 || static_cast<std::size_t>(n) > sites.size())
      throw UsageError(fmt::format("experiment: scaling count {} outside 1..{}", n, sites.size()));

  ExperimentReport report;
  const fs::path reports = plan.output / "reports";
  for (int fold : plan.folds) {
    RunLayout layout{plan.output / "run" / fmt::format("{}-f{}", plan.federation.run_name, fold)};
    const FederationRun run = run_federation(sites, fold, plan.federation, layout);
    report.rows.insert(report.rows.end(), run.rows.begin(), run.rows.end());
  }
  sort_rows(report.rows);
  report.summary_table = render_summary_table(report.rows);
  report.tests = compare_syn_real(report.rows, plan.alpha);
  report.stats_table = render_stats_table(report.tests, plan.alpha);
  fs::create_directories(reports);
  write_if_changed(reports / "metrics.csv", metrics_to_csv(report.rows));
  write_if_changed(reports / "summary.txt", report.summary_table);
  write_if_changed(reports / "stats.txt", report.stats_table);

  if (!plan.scaling_site_counts.empty()) {
    std::vector<const Dataset*> ordered;
    for (const auto& d : sites) ordered.push_back(&d);
    std::sort(ordered.begin(), ordered.end(),
              [](const Dataset* a, const Dataset* b) { return a->site_id < b->site_id; });
    FederationConfig cfg = plan.federation;
    cfg.arms = {Arm::Real, Arm::SynAll, Arm::SynReal};
    for (int n : plan.scaling_site_counts) {
      std::vector<Dataset> subset_sites;
      for (int i = 0; i < n; ++i) subset_sites.push_back(*ordered[static_cast<std::size_t>(i)]);
      double sum = 0.0;
      for (int fold : plan.folds) {
        RunLayout layout{plan.output / "scaling" / fmt::format("N{}-f{}", n, fold)};
        const FederationRun run = run_federation(subset_sites, fold, cfg, layout);
        const double delta = mean_delta_ds(run.rows);
        report.scaling.push_back({n, fold, delta});
        sum += delta;
      }
      report.scaling_mean[n] = sum / static_cast<double>(plan.folds.size());
    }
    write_if_changed(reports / "scaling.csv", scaling_to_csv(report.scaling));
    std::string text = fmt::format("{:>7}  {:>14}\n", "n_sites", "mean delta DS");
    for (const auto& [n, mean] : report.scaling_mean) text += fmt::format("{:>7}  {:>14.2f}\n", n, mean);
    text += "delta DS = DS(syn-real) - DS(real), x100, over all (train site, test site) pairs and folds.\n";
    write_if_changed(reports / "scaling.txt", text);
  }
  return report;
}

std::string scaling_to_csv(std::span<const ScalingPoint> points) {
  std::string out = "n_sites,fold,delta_ds\n";
  for (const auto& p : points) out += fmt::format("{},{},{:.17g}\n", p.n_sites, p.fold, p.delta_ds);
  return out;
}

}  // namespace synthfed
