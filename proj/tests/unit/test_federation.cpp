#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "synthfed/bundle.hpp"
#include "synthfed/error.hpp"
#include "synthfed/event_log.hpp"
#include "synthfed/federation.hpp"
#include "synthfed/hash.hpp"
#include "synthfed/rng.hpp"
#include "synthfed/toy_data.hpp"
#include "test_util.hpp"

using namespace synthfed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

SyntheticBundle small_bundle(const std::string& site, std::size_t n, int num_classes = 1, std::uint64_t seed = 1) {
  Rng rng(seed);
  SyntheticBundle b;
  b.site_id = site;
  b.modality = "toy";
  b.num_classes = num_classes;
  b.provenance = {seed, 4, 40, "abc", kReferenceGeneratorId};
  MemorizationReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(64);
    for (auto& v : px) v = static_cast<float>(rng.uniform01());
    std::vector<std::uint8_t> labels(64);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(num_classes + 1));
    b.images.push_back(quantize16(Image2D(8, 8, 1, px)));
    b.masks.emplace_back(8, 8, num_classes, labels);
    b.sources.push_back(sample_ref(site, i));
    rep.entries.push_back({sample_ref(site, i), "p/0", 1.0, Verdict::Kept});
  }
  rep.n_total = n;
  b.filter_report_csv = rep.to_csv();
  b.threshold = 0.5;
  b.percentile = 5;
  return b;
}

ToyBenchmarkConfig tiny_toy() {
  ToyBenchmarkConfig cfg;
  cfg.patients_per_site = 10;
  cfg.images_per_patient = 1;
  cfg.image_size = 32;
  return cfg;
}

FederationConfig quick_config() {
  FederationConfig cfg;
  cfg.epochs = 5;
  cfg.finetune_epochs = 5;
  cfg.fedavg_rounds = 3;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("site state moves forward one phase at a time") {
  SiteState s{"A", SitePhase::Idle};
  s.advance(SitePhase::Fingerprinted);
  s.advance(SitePhase::Planned);
  CHECK(s.phase == SitePhase::Planned);
  CHECK_THROWS_AS(s.advance(SitePhase::Synthesized), DataError);
  CHECK_THROWS_AS(s.advance(SitePhase::Fingerprinted), DataError);
  CHECK_THROWS_AS(s.advance(SitePhase::Planned), DataError);
  for (int i = 0; i <= static_cast<int>(SitePhase::FineTuned); ++i) {
    const auto p = static_cast<SitePhase>(i);
    CHECK(parse_phase(phase_name(p)) == p);
  }
  CHECK_FALSE(parse_phase("Merged").has_value());
}

TEST_CASE("event log appends, persists and enforces order") {
  testutil::TempDir dir("events");
  const fs::path path = dir / "events.log";
  {
    EventLog log(path);
    log.append({1, "A", "Fingerprinted", "h1", {}});
    log.append({1, "B", "Fingerprinted", "h2", {}});
    log.append({2, "A", "Planned", "h3", {}});
    CHECK_THROWS_AS(log.append({1, "C", "Fingerprinted", "h", {}}), DataError);
    CHECK_THROWS_AS(log.append({2, "B", "Synthesized", "h", {}}), DataError);
    log.append({8, "central", "Merged", "h4", {}});
  }
  EventLog again(path);
  REQUIRE(again.events().size() == 4);
  CHECK(again.find("A", "Planned")->artifact_hash == "h3");
  CHECK(again.find("B", "Planned") == nullptr);
  CHECK(again.events()[0].timestamp.size() == 20);
  CHECK(again.events()[0].timestamp.back() == 'Z');
  const auto lines = parse_events(slurp(path));
  CHECK(lines.size() == 4);
  CHECK(format_event(lines[1]).rfind("1\tB\tFingerprinted\th2\t", 0) == 0);
}

TEST_CASE("event log rejects damaged files") {
  CHECK_THROWS_AS(parse_events("1\tA\tFingerprinted\n"), DataError);
  CHECK_THROWS_AS(parse_events("x\tA\tFingerprinted\th\tt\n"), DataError);
  const auto skip = parse_events("1\tA\tFingerprinted\th\tt\n3\tA\tGenTrained\th\tt\n");
  CHECK_THROWS_AS(check_event_order(skip), DataError);
  const auto unordered = parse_events("1\tB\tFingerprinted\th\tt\n1\tA\tFingerprinted\th\tt\n");
  CHECK_THROWS_AS(check_event_order(unordered), DataError);
}

TEST_CASE("property: logs written in lock-step pass the order check") {
  Rng rng(40);
  for (int t = 0; t < 20; ++t) {
    const int sites = 1 + static_cast<int>(rng.uniform_index(5));
    const int phases = 1 + static_cast<int>(rng.uniform_index(8));
    std::vector<Event> events;
    for (int p = 1; p <= phases; ++p)
      for (int s = 0; s < sites; ++s)
        events.push_back({static_cast<std::uint64_t>(p), std::string(1, static_cast<char>('A' + s)),
                          std::string(phase_name(static_cast<SitePhase>(p))), "h", "t"});
    CHECK_NOTHROW(check_event_order(events));
    if (events.size() > 1) {
      const auto i = rng.uniform_index(events.size() - 1);
      std::swap(events[i], events[i + 1]);
      CHECK_THROWS_AS(check_event_order(events), DataError);
    }
  }
}

TEST_CASE("arms") {
  CHECK(all_arms().size() == 7);
  for (Arm a : all_arms()) CHECK(parse_arm(arm_name(a)) == a);
  CHECK_FALSE(parse_arm("bogus"));
  const std::vector<Arm> dup{Arm::Real, Arm::Real};
  CHECK_THROWS_AS(validate_arms(dup), UsageError);
  const std::vector<Arm> missing{Arm::SynLocalReal};
  CHECK_THROWS_AS(validate_arms(missing), UsageError);
  const std::vector<Arm> ok{Arm::SynLocal, Arm::SynLocalReal};
  CHECK_NOTHROW(validate_arms(ok));
}

TEST_CASE("bundle publish and load round-trip") {
  testutil::TempDir dir("bundle");
  const SyntheticBundle b = small_bundle("A", 5);
  const std::string hash = publish_bundle(b, dir / "A");
  CHECK(hash == compute_bundle_hash(dir / "A"));
  const SyntheticBundle back = load_bundle(dir / "A");
  CHECK(back.site_id == "A");
  CHECK(back.images == b.images);
  CHECK(back.masks == b.masks);
  CHECK(back.sources == b.sources);
  CHECK(back.provenance == b.provenance);
  CHECK(back.filter_report_csv == b.filter_report_csv);
  // republishing the same content is byte-identical
  const std::string manifest = slurp(dir / "A/manifest.json");
  publish_bundle(b, dir / "A");
  CHECK(slurp(dir / "A/manifest.json") == manifest);
}

TEST_CASE("tampered bundles are rejected") {
  testutil::TempDir dir("bundle");
  const SyntheticBundle b = small_bundle("A", 3);
  publish_bundle(b, dir / "A");
  const nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "A/manifest.json"));

  SUBCASE("filter report") {
    spit(dir / "A/filter_report.csv", slurp(dir / "A/filter_report.csv") + "x");
    CHECK_THROWS_AS(load_bundle(dir / "A"), DataError);
  }
  SUBCASE("image file") {
    const std::string rel = manifest.at("items").at(0).at("image").get<std::string>();
    fs::copy_file(dir / ("A/" + manifest.at("items").at(1).at("image").get<std::string>()), dir / ("A/" + rel),
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(load_bundle(dir / "A"), DataError);
  }
  SUBCASE("manifest field") {
    nlohmann::json m = manifest;
    m["num_classes"] = 2;
    spit(dir / "A/manifest.json", m.dump(2) + "\n");
    CHECK_THROWS_AS(load_bundle(dir / "A"), DataError);
  }
  SUBCASE("recorded report hash") {
    nlohmann::json m = manifest;
    m["filter"]["report_sha256"] = sha256_hex("other");
    spit(dir / "A/manifest.json", m.dump(2) + "\n");
    CHECK_THROWS_AS(load_bundle(dir / "A"), DataError);
  }
}

TEST_CASE("bundles may not contain real images") {
  const SyntheticBundle b = small_bundle("A", 3);
  Dataset real;
  real.site_id = "A";
  real.patients.push_back({"p", {}, {{"p/0", b.images[1], std::nullopt}}});
  CHECK_THROWS_AS(check_no_real_images(b, real), DataError);
  real.patients[0].items[0].image = small_bundle("A", 1, 1, 99).images[0];
  CHECK_NOTHROW(check_no_real_images(b, real));
}

TEST_CASE("merge is arrival-order independent and concatenates") {
  testutil::TempDir dir("merge");
  publish_bundle(small_bundle("A", 5, 1, 1), dir / "in/A");
  publish_bundle(small_bundle("B", 3, 1, 2), dir / "in/B");
  const std::vector<fs::path> ab{dir / "in/A", dir / "in/B"}, ba{dir / "in/B", dir / "in/A"};
  const MergedSynthetic m1 = write_merged(ab, dir / "m1");
  const MergedSynthetic m2 = write_merged(ba, dir / "m2");
  CHECK(m1.manifest_json == m2.manifest_json);
  CHECK(slurp(dir / "m1/manifest.json") == slurp(dir / "m2/manifest.json"));
  CHECK(m1.data.image_count() == 8);
  CHECK(m1.data.patients.front().id == "A");
  const MergedSynthetic again = load_merged(dir / "m1");
  CHECK(again.manifest_json == m1.manifest_json);
  CHECK(again.data.image_count() == 8);

  publish_bundle(small_bundle("B", 4, 1, 3), dir / "in/B");
  CHECK_THROWS_AS(load_merged(dir / "m1"), DataError);
}

TEST_CASE("merge rejects inconsistent inputs") {
  testutil::TempDir dir("merge");
  publish_bundle(small_bundle("A", 2, 2), dir / "A");
  publish_bundle(small_bundle("B", 2, 3), dir / "B");
  publish_bundle(small_bundle("A", 2, 2, 5), dir / "A2");
  const std::vector<fs::path> classes{dir / "A", dir / "B"}, dup{dir / "A", dir / "A2"}, none{};
  CHECK_THROWS_AS(merge_bundles(classes, dir / "m"), DataError);
  CHECK_THROWS_AS(merge_bundles(dup, dir / "m"), DataError);
  CHECK_THROWS(merge_bundles(none, dir / "m"));
}

TEST_CASE("artifact hash covers names and contents") {
  testutil::TempDir dir("hash");
  spit(dir / "a", "1");
  spit(dir / "b", "2");
  const std::vector<std::string> ab{"a", "b"}, a{"a"};
  const std::string h = artifact_hash(dir.path(), ab);
  CHECK(h == artifact_hash(dir.path(), ab));
  CHECK(h != artifact_hash(dir.path(), a));
  const std::string lines = "a " + sha256_hex("1") + "\nb " + sha256_hex("2") + "\n";
  CHECK(h == sha256_hex(lines));
  spit(dir / "b", "3");
  CHECK(h != artifact_hash(dir.path(), ab));
  const std::vector<std::string> missing{"zzz"};
  CHECK_THROWS_AS(artifact_hash(dir.path(), missing), DataError);
}

TEST_CASE("site pipeline: bundle size and memorizing generator") {
  testutil::TempDir dir("site");
  ToyBenchmarkConfig toy = tiny_toy();
  toy.patients_per_site = 25;
  toy.images_per_patient = 2;
  const Dataset site = make_toy_site(toy, 0);
  FederationConfig cfg = quick_config();

  SUBCASE("at most 10x the training images") {
    const SiteContext ctx = make_site_context(site, 0, cfg, dir / "A");
    const SyntheticBundle b = run_site_pipeline(ctx, cfg);
    CHECK(b.images.size() <= 10 * ctx.train.image_count());
    CHECK(b.images.size() > 0);
    CHECK(b.images.size() == b.masks.size());
    CHECK_NOTHROW(check_no_real_images(b, site));
  }
  SUBCASE("copies of training images never reach the bundle") {
    cfg.generator.noise_amplitude = 0.0f;
    cfg.generator.max_library = 1;
    const SiteContext ctx = make_site_context(site, 0, cfg, dir / "A");
    const SyntheticBundle b = run_site_pipeline(ctx, cfg);
    const auto report = parse_memorization_csv(slurp(dir / "A/filter_report.csv"));
    CHECK(report.n_discarded == report.n_total);
    CHECK(b.images.empty());
  }
}

TEST_CASE("seeds depend on the site id, not list position") {
  FederationConfig cfg;
  cfg.seed = 5;
  CHECK(fold_seed(cfg, "A") != fold_seed(cfg, "B"));
  CHECK(generator_seed(cfg, "A", 0) != generator_seed(cfg, "A", 1));
  CHECK(sample_seed(cfg, "A", 0) != generator_seed(cfg, "A", 0));
  CHECK(calibration_seed(cfg, "A", 2) == calibration_seed(cfg, "A", 2));
}

TEST_CASE("fine-tuning is independent per site") {
  const ToyBenchmarkConfig toy = tiny_toy();
  const auto sites = make_toy_benchmark(toy);
  FederationConfig cfg = quick_config();
  const auto ctx_a = make_site_context(sites[0], 0, cfg, {});
  const auto ctx_b = make_site_context(sites[1], 0, cfg, {});
  const Dataset* parts[] = {&ctx_a.train, &ctx_b.train};
  const Dataset pooled = pool_datasets(parts, "pool");
  const SegPlan plan = derive_seg_plan(fingerprint_dataset(pooled));
  std::vector<LabeledImage> data;
  for (const Item* it : pooled.items()) data.push_back({&it->image, &*it->mask});
  const ReferenceSegmenter general = fit_segmenter(plan, 1, data, 5, 1.0);
  const auto a1 = finetune_at_site(general, ctx_a.train, cfg);
  const auto b1 = finetune_at_site(general, ctx_b.train, cfg);
  const auto b2 = finetune_at_site(general, ctx_b.train, cfg);
  const auto a2 = finetune_at_site(general, ctx_a.train, cfg);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
  cfg.finetune_epochs = 0;
  CHECK(finetune_at_site(general, ctx_a.train, cfg) == general);
  CHECK(pooled.image_count() == ctx_a.train.image_count() + ctx_b.train.image_count());
  CHECK(pooled.patients.front().id.rfind("A:", 0) == 0);
}

TEST_CASE("federation run resumes without rewriting and detects tampering") {
  testutil::TempDir dir("run");
  const auto sites = make_toy_benchmark(tiny_toy());
  FederationConfig cfg = quick_config();
  const RunLayout layout{dir / "run"};
  const FederationRun run = run_federation(sites, 0, cfg, layout);
  CHECK(run.sites == std::vector<std::string>{"A", "B"});
  CHECK(fs::exists(layout.reports_dir() / "metrics.csv"));
  const std::string log = slurp(layout.events_path());
  const auto model_time = fs::last_write_time(run.general_model);

  const FederationRun again = run_federation(sites, 0, cfg, layout);
  CHECK(slurp(layout.events_path()) == log);
  CHECK(fs::last_write_time(run.general_model) == model_time);
  CHECK(again.rows == run.rows);

  spit(layout.site_dir("A") / "plan.json", slurp(layout.site_dir("A") / "plan.json") + " ");
  CHECK_THROWS_AS(run_federation(sites, 0, cfg, layout), DataError);
}

TEST_CASE("federation rejects bad site sets") {
  testutil::TempDir dir("run");
  auto sites = make_toy_benchmark(tiny_toy());
  const RunLayout layout{dir / "run"};
  sites[1].site_id = "A";
  CHECK_THROWS_AS(run_federation(sites, 0, quick_config(), layout), UsageError);
  sites[1].site_id = "central";
  CHECK_THROWS_AS(run_federation(sites, 0, quick_config(), layout), UsageError);
  CHECK_THROWS_AS(run_federation(std::span<const Dataset>(), 0, quick_config(), layout), UsageError);
}
