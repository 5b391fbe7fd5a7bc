#include "synthfed/cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <nlohmann/json.hpp>

#include "core/fs_util.hpp"
#include "synthfed/config.hpp"
#include "synthfed/embedding.hpp"
#include "synthfed/error.hpp"
#include "synthfed/federation.hpp"
#include "synthfed/hash.hpp"
#include "synthfed/metrics.hpp"
#include "synthfed/planner.hpp"

namespace synthfed {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Options shared by commands that read one site's dataset.
struct DataOpts {
  std::string dataset;
  int fold = -1;  // -1: the whole dataset
  std::uint64_t seed = 0;

  void add(CLI::App* cmd, bool required = true) {
    cmd->add_option("--dataset", dataset, "dataset directory (manifest.json + PNGs)")->required(required);
    cmd->add_option("--fold", fold, "restrict to this fold (0-4)")->check(CLI::Range(0, kFoldCount - 1));
    cmd->add_option("--seed", seed, "run seed; fold splits derive from it");
  }
};

struct SiteView {
  Dataset local;
  Dataset train;
  Dataset test;
};

SiteView load_view(const DataOpts& o) {
  SiteView v{load_dataset(o.dataset), {}, {}};
  if (o.fold < 0) {
    v.train = v.local;
    v.test = v.local;
    return v;
  }
  FederationConfig cfg;
  cfg.seed = o.seed;
  const SiteContext ctx = make_site_context(v.local, o.fold, cfg, {});
  v.train = ctx.train;
  v.test = ctx.test;
  return v;
}

std::vector<LabeledImage> labeled(const Dataset& d) {
  std::vector<LabeledImage> out;
  for (const Item* item : d.items()) {
    if (!item->mask) throw DataError("image " + item->ref + " has no mask");
    out.push_back({&item->image, &*item->mask});
  }
  return out;
}

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty())
    out << text;
  else
    fsutil::write_text_atomic(path, text);
}

EmbeddingSet embed_samples(const std::vector<Image2D>& samples, const std::string& site_id,
                           const EmbeddingProvider& provider) {
  std::vector<ImageRef> refs;
  for (std::size_t i = 0; i < samples.size(); ++i) refs.push_back({sample_ref(site_id, i), &samples[i]});
  return embed_dataset(refs, provider);
}

}  // namespace

int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"synthfed: synthetic data sharing across sites"};
  app.name("synthfed");
  app.require_subcommand(1);

  DataOpts data;
  std::string out_path, model_path, generator_path, samples_path, report_path, calibration_path, segmenter_path;
  std::string merged_dir, setting, real_emb, syn_emb, emb_a, emb_b, run_dir, config_path, output_override;
  std::vector<std::string> bundle_dirs;
  int epochs = 50;
  double base_rate = 1.0;
  double percentile = kDefaultPercentile;
  double alpha = 0.01;
  std::size_t n_tests = 0;
  std::size_t n_samples = 0;
  GeneratorConfig gen_cfg;
  std::size_t kimg = 0;
  ToyBenchmarkConfig toy;

  auto* fingerprint = app.add_subcommand("fingerprint", "print the dataset fingerprint as JSON");
  data.add(fingerprint);

  auto* plan = app.add_subcommand("plan", "derive plan.json from a dataset");
  data.add(plan);
  plan->add_option("--epochs", epochs, "segmenter epochs recorded in the budget")->check(CLI::PositiveNumber);
  plan->add_option("--out", out_path, "write here instead of stdout");

  auto* split = app.add_subcommand("split", "print the five patient-level fold splits");
  split->add_option("--dataset", data.dataset)->required();
  split->add_option("--seed", data.seed);

  auto* train_gen = app.add_subcommand("train-gen", "fit the reference generator on a dataset's images");
  data.add(train_gen);
  train_gen->add_option("--out", out_path)->required();
  train_gen->add_option("--tile-grid", gen_cfg.tile_grid)->check(CLI::PositiveNumber);
  train_gen->add_option("--noise", gen_cfg.noise_amplitude)->check(CLI::Range(0.0, 1.0));
  train_gen->add_option("--max-library", gen_cfg.max_library, "0 keeps every training image");
  train_gen->add_option("--kimg", kimg, "override n_steps (thousands of presentations)");

  auto* synthesize = app.add_subcommand("synthesize", "sample synthetic images from a trained generator");
  synthesize->add_option("--generator", generator_path)->required();
  synthesize->add_option("--out", out_path)->required();
  synthesize->add_option("--n", n_samples, "sample count (default: n_gen of the generator's budget)");
  synthesize->add_option("--seed", data.seed);

  auto* filter = app.add_subcommand("filter", "memorization filter: calibrate on real data, judge samples");
  data.add(filter);
  filter->add_option("--samples", samples_path)->required();
  filter->add_option("--percentile", percentile)->check(CLI::Range(0.0, 100.0));
  filter->add_option("--real-emb", real_emb, "EMB1 embeddings of the real images (ids = image refs)");
  filter->add_option("--syn-emb", syn_emb, "EMB1 embeddings of the samples, in sample order");
  filter->add_option("--out", out_path, "filter report CSV")->required();
  filter->add_option("--calibration", calibration_path, "also write the calibration JSON here");

  auto* bundle = app.add_subcommand("bundle", "label kept samples and publish a synthetic bundle");
  data.add(bundle);
  bundle->add_option("--samples", samples_path)->required();
  bundle->add_option("--report", report_path)->required();
  bundle->add_option("--calibration", calibration_path)->required();
  bundle->add_option("--segmenter", segmenter_path, "the site's real-data segmenter")->required();
  bundle->add_option("--generator", generator_path, "for provenance")->required();
  bundle->add_option("--out", out_path, "bundle directory")->required();

  auto* merge = app.add_subcommand("merge", "validate and merge synthetic bundles");
  merge->add_option("--bundle", bundle_dirs)->required();
  merge->add_option("--out", out_path, "merged directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "train a segmenter from scratch on merged bundles or a dataset");
  auto* merged_opt = pretrain->add_option("--merged", merged_dir);
  data.add(pretrain, false);
  pretrain->get_option("--dataset")->excludes(merged_opt);
  pretrain->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  pretrain->add_option("--base-rate", base_rate)->check(CLI::PositiveNumber);
  pretrain->add_option("--out", out_path)->required();

  auto* finetune = app.add_subcommand("finetune", "fine-tune a model on local real data");
  data.add(finetune);
  finetune->add_option("--model", model_path)->required();
  finetune->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
  finetune->add_option("--base-rate", base_rate)->check(CLI::PositiveNumber);
  finetune->add_option("--out", out_path)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Dice and HD95 of a model on a dataset (test fold with --fold)");
  data.add(evaluate);
  evaluate->add_option("--model", model_path)->required();
  evaluate->add_option("--setting", setting, "setting name for the rows (default: model file stem)");
  evaluate->add_option("--out", out_path, "metrics CSV to create or update");

  auto* stats = app.add_subcommand("stats", "Wilcoxon tests with Bonferroni correction over a metrics CSV");
  stats->add_option("--report", report_path, "metrics.csv")->required();
  stats->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0));
  stats->add_option("--tests", n_tests, "Bonferroni family size (default: tests run)");

  auto* experiment = app.add_subcommand("experiment", "declarative experiments");
  experiment->require_subcommand(1);
  auto* experiment_run = experiment->add_subcommand("run", "run every fold, arm and report of a TOML config");
  experiment_run->add_option("config", config_path)->required();
  experiment_run->add_option("--output", output_override, "override the config's output directory");

  auto* report = app.add_subcommand("report", "render the summary and statistics of a finished experiment");
  report->add_option("--run", run_dir, "experiment output directory")->required();
  report->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0));

  auto* toy_data = app.add_subcommand("toy-data", "write the toy benchmark sites as datasets");
  toy_data->add_option("--out", out_path)->required();
  toy_data->add_option("--sites", toy.num_sites)->check(CLI::Range(1, 64));
  toy_data->add_option("--patients", toy.patients_per_site)->check(CLI::Range(5, 100000));
  toy_data->add_option("--images", toy.images_per_patient)->check(CLI::PositiveNumber);
  toy_data->add_option("--size", toy.image_size)->check(CLI::Range(16, 4096));
  toy_data->add_option("--shift", toy.max_shift);
  toy_data->add_option("--seed", toy.seed);

  auto* fid = app.add_subcommand("fid", "Frechet distance between two EMB1 embedding files");
  fid->add_option("--a", emb_a)->required();
  fid->add_option("--b", emb_b)->required();

  auto* audit = app.add_subcommand("audit", "nearest neighbour of every vector of --a in --b");
  audit->add_option("--a", emb_a)->required();
  audit->add_option("--b", emb_b)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fingerprint) {
      out << serialize_fingerprint(fingerprint_dataset(load_view(data).train)) << "\n";
    } else if (*plan) {
      write_or_print(
          out_path, serialize_plan(make_plan_document(fingerprint_dataset(load_view(data).train), epochs)) + "\n", out);
    } else if (*split) {
      const Dataset d = load_dataset(data.dataset);
      FederationConfig cfg;
      cfg.seed = data.seed;
      json folds = json::array();
      for (const auto& f : make_fold_splits(d, fold_seed(cfg, d.site_id)))
        folds.push_back(
            {{"fold", f.fold_index}, {"train", f.train_patients}, {"val", f.val_patients}, {"test", f.test_patients}});
      out << folds.dump(2) << "\n";
    } else if (*train_gen) {
      const SiteView v = load_view(data);
      PlanDocument doc = make_plan_document(fingerprint_dataset(v.train));
      if (kimg > 0) doc.budget.n_steps_kimg = kimg;
      FederationConfig cfg;
      cfg.seed = data.seed;
      ReferenceGenerator g(doc.gan, doc.budget, generator_seed(cfg, v.train.site_id, std::max(data.fold, 0)), gen_cfg);
      std::vector<Image2D> images;
      for (const Item* item : v.train.items()) images.push_back(item->image);
      g.fit(images);
      g.save(out_path);
      out << fmt::format("presentations {} library {}\n", g.presentations(), g.library_size(0, 0));
    } else if (*synthesize) {
      const ReferenceGenerator g = ReferenceGenerator::load(generator_path);
      const std::size_t n = synthesize->count("--n") ? n_samples : g.budget().n_gen;
      const auto samples = g.sample(n, data.seed);
      save_samples(out_path, samples);
      out << fmt::format("samples {}\n", samples.size());
    } else if (*filter) {
      const SiteView v = load_view(data);
      const std::vector<Image2D> samples = load_samples(samples_path);
      const ToyEmbeddingProvider toy_provider;
      const EmbeddingSet real = real_emb.empty()
                                    ? embed_dataset(v.train, toy_provider)
                                    : embed_dataset(v.train, FileEmbeddingProvider(read_emb1(real_emb), real_emb));
      EmbeddingSet synthetic;
      if (syn_emb.empty()) {
        synthetic = embed_samples(samples, v.train.site_id, toy_provider);
      } else {
        const EmbeddingSet file = read_emb1(syn_emb);
        if (file.size() != samples.size())
          throw DataError(fmt::format("{} has {} vectors for {} samples", syn_emb, file.size(), samples.size()));
        synthetic = EmbeddingSet(file.dimension());
        for (std::size_t i = 0; i < file.size(); ++i) synthetic.add(file.row(i), sample_ref(v.train.site_id, i));
      }
      FederationConfig cfg;
      cfg.seed = data.seed;
      const std::uint64_t seed = calibration_seed(cfg, v.train.site_id, std::max(data.fold, 0));
      const ThresholdCalibration cal = calibrate_threshold(real, split_patients(v.train, seed), percentile, seed);
      const MemorizationReport rep = filter_synthetic(synthetic, real, cal);
      fsutil::write_text_atomic(out_path, rep.to_csv());
      if (!calibration_path.empty()) {
        const json c{{"provider", real_emb.empty() ? toy_provider.name() : std::string("emb1-file")},
                     {"percentile", cal.p},
                     {"split_seed", cal.split_seed},
                     {"n_distances", cal.distances.size()},
                     {"threshold", cal.threshold},
                     {"n_total", rep.n_total},
                     {"n_discarded", rep.n_discarded}};
        fsutil::write_text_atomic(calibration_path, c.dump(2) + "\n");
      }
      out << fmt::format("total {} discarded {} kept {} threshold {:.9g}\n", rep.n_total, rep.n_discarded, rep.n_kept(),
                         cal.threshold);
    } else if (*bundle) {
      const SiteView v = load_view(data);
      const std::vector<Image2D> samples = load_samples(samples_path);
      const json cal = fsutil::read_json_file(calibration_path);
      const ReferenceGenerator g = ReferenceGenerator::load(generator_path);
      const ReferenceSegmenter seg = ReferenceSegmenter::load(segmenter_path);
      const DatasetFingerprint f = fingerprint_dataset(v.train);
      if (plan_hash(seg.plan()) != plan_hash(derive_seg_plan(f)))
        throw DataError("segmenter " + segmenter_path + " was not planned from this dataset");
      const BundleProvenance provenance{g.seed(), g.budget().n_steps_kimg, g.budget().n_gen, plan_hash(seg.plan()),
                                        kReferenceGeneratorId};
      const SyntheticBundle b =
          assemble_bundle(v.local, samples, fsutil::read_text(report_path), cal.at("threshold").get<double>(),
                          cal.at("percentile").get<double>(), seg, provenance, f.median_spacing);
      const std::string hash = publish_bundle(b, out_path);
      out << fmt::format("images {} content_hash {}\n", b.images.size(), hash);
    } else if (*merge) {
      std::vector<fs::path> dirs(bundle_dirs.begin(), bundle_dirs.end());
      const MergedSynthetic m = write_merged(dirs, out_path);
      out << fmt::format("images {} manifest_sha256 {}\n", m.data.image_count(), sha256_hex(m.manifest_json));
    } else if (*pretrain) {
      FederationConfig cfg;
      cfg.epochs = epochs;
      cfg.base_rate = base_rate;
      ReferenceSegmenter model = [&] {
        if (!merged_dir.empty()) return pretrain_general(load_merged(merged_dir), cfg);
        if (data.dataset.empty()) throw UsageError("pretrain: give --merged or --dataset");
        const SiteView v = load_view(data);
        const auto train = labeled(v.train);
        return fit_segmenter(derive_seg_plan(fingerprint_dataset(v.train)), v.train.num_classes, train, epochs,
                             base_rate);
      }();
      model.save(out_path);
      out << fmt::format("plan_hash {}\n", plan_hash(model.plan()));
    } else if (*finetune) {
      FederationConfig cfg;
      cfg.finetune_epochs = epochs;
      cfg.base_rate = base_rate;
      const SiteView v = load_view(data);
      finetune_at_site(ReferenceSegmenter::load(model_path), v.train, cfg).save(out_path);
    } else if (*evaluate) {
      const SiteView v = load_view(data);
      const std::string name = setting.empty() ? fs::path(model_path).stem().string() : setting;
      std::vector<MetricRow> rows = evaluate_model(ReferenceSegmenter::load(model_path), v.test, name, data.fold);
      if (!out_path.empty()) {
        std::vector<MetricRow> all;
        if (fs::exists(out_path)) all = metrics_from_csv(fsutil::read_text(out_path));
        std::erase_if(all, [&](const MetricRow& r) {
          return std::any_of(rows.begin(), rows.end(), [&](const MetricRow& n) {
            return n.setting == r.setting && n.test_site == r.test_site && n.metric == r.metric && n.fold == r.fold;
          });
        });
        all.insert(all.end(), rows.begin(), rows.end());
        sort_rows(all);
        fsutil::write_text_atomic(out_path, metrics_to_csv(all));
      }
      out << metrics_to_csv(rows);
    } else if (*stats) {
      if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must be in (0, 1)");
      const auto rows = metrics_from_csv(fsutil::read_text(report_path));
      const auto tests =
          compare_syn_real(rows, alpha, n_tests > 0 ? std::optional<std::size_t>(n_tests) : std::nullopt);
      out << render_stats_table(tests, alpha);
    } else if (*experiment_run) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (!output_override.empty()) cfg.plan.output = output_override;
      const std::vector<Dataset> sites = load_sites(cfg);
      const ExperimentReport rep = run_experiment(cfg.plan, sites);
      out << rep.summary_table << "\n" << rep.stats_table;
      if (!rep.scaling_mean.empty()) {
        out << "\nscaling (mean delta DS, syn-real - real):\n";
        for (const auto& [n, mean] : rep.scaling_mean) out << fmt::format("  N={:<3} {:+.2f}\n", n, mean);
      }
      out << "reports: " << (cfg.plan.output / "reports").string() << "\n";
    } else if (*report) {
      if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must be in (0, 1)");
      const fs::path reports = fs::path(run_dir) / "reports";
      if (!fs::exists(reports / "metrics.csv")) throw DataError("no reports/metrics.csv under " + run_dir);
      const auto rows = metrics_from_csv(fsutil::read_text(reports / "metrics.csv"));
      out << render_summary_table(rows) << "\n" << render_stats_table(compare_syn_real(rows, alpha), alpha);
      if (fs::exists(reports / "scaling.txt")) out << "\n" << fsutil::read_text(reports / "scaling.txt");
    } else if (*toy_data) {
      for (const auto& d : make_toy_benchmark(toy)) {
        save_dataset(d, fs::path(out_path) / d.site_id);
        out << fmt::format("{} {} patients {} images\n", d.site_id, d.patients.size(), d.image_count());
      }
    } else if (*fid) {
      out << fmt::format("{:.9g}\n", frechet_distance(read_emb1(emb_a), read_emb1(emb_b)));
    } else if (*audit) {
      out << "ref_a,ref_b,distance\n";
      for (const auto& row : nearest_neighbor_audit(read_emb1(emb_a), read_emb1(emb_b)))
        out << fmt::format("{},{},{:.9g}\n", row.ref_a, row.ref_b, row.distance);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace synthfed
