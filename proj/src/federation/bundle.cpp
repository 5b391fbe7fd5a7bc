#include "synthfed/bundle.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_set>

#include "core/fs_util.hpp"
#include "synthfed/error.hpp"
#include "synthfed/hash.hpp"
#include "synthfed/memfilter.hpp"
#include "synthfed/png_io.hpp"

namespace synthfed {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kBundleFormat = "synthfed-bundle/1";
constexpr const char* kMergedFormat = "synthfed-merged/1";

std::string hash_of(const json& manifest_without_hash, const std::string& report) {
  return sha256_hex(manifest_without_hash.dump() + "\n" + report);
}

void write_image(const fs::path& path, const Image2D& image) {
  png::Raster raster{image.height(), image.width(), image.channels(), 16, {}};
  raster.samples.resize(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), raster.samples.begin(), to_u16);
  png::write(path, raster);
}

void write_mask(const fs::path& path, const SegMask& mask) {
  png::Raster raster{mask.height(), mask.width(), 1, 8, {}};
  raster.samples.assign(mask.labels().begin(), mask.labels().end());
  png::write(path, raster);
}

Image2D read_image(const fs::path& path, Spacing spacing) {
  const png::Raster raster = png::read(path);
  if (raster.bit_depth != 16) throw DataError(path.string() + ": bundle images must be 16-bit");
  std::vector<float> pixels(raster.samples.size());
  std::transform(raster.samples.begin(), raster.samples.end(), pixels.begin(), from_u16);
  return Image2D(raster.height, raster.width, raster.channels, std::move(pixels), spacing);
}

SegMask read_mask(const fs::path& path, int num_classes) {
  const png::Raster raster = png::read(path);
  if (raster.channels != 1) throw DataError(path.string() + ": mask must be single-channel");
  std::vector<std::uint8_t> labels(raster.samples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (raster.samples[i] > static_cast<std::uint16_t>(num_classes))
      throw DataError(path.string() + ": label exceeds the bundle class count");
    labels[i] = static_cast<std::uint8_t>(raster.samples[i]);
  }
  return SegMask(raster.height, raster.width, num_classes, std::move(labels));
}

std::set<std::string> kept_refs(const std::string& csv, const std::string& where) {
  std::set<std::string> kept;
  try {
    for (const auto& e : parse_memorization_csv(csv).entries)
      if (e.verdict == Verdict::Kept) kept.insert(e.image_ref);
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return kept;
}

std::string image_key(const Image2D& image) {
  std::string key = fmt::format("{}x{}x{}:", image.height(), image.width(), image.channels());
  key.reserve(key.size() + image.pixels().size() * 2);
  for (float v : image.pixels()) {
    const std::uint16_t q = to_u16(v);
    key.push_back(static_cast<char>(q & 0xff));
    key.push_back(static_cast<char>(q >> 8));
  }
  return key;
}

}  // namespace

std::string publish_bundle(const SyntheticBundle& bundle, const fs::path& dir) {
  if (bundle.site_id.empty()) throw DataError("bundle: empty site id");
  if (bundle.images.size() != bundle.masks.size() || bundle.images.size() != bundle.sources.size())
    throw DataError("bundle: images, masks and sources differ in length");
  const std::set<std::string> kept = kept_refs(bundle.filter_report_csv, "bundle " + bundle.site_id);

  // Republishing replaces the directory wholesale; stale files must not linger.
  fs::remove_all(dir);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");

  json items = json::array();
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    const Image2D& image = bundle.images[i];
    const SegMask& mask = bundle.masks[i];
    if (mask.extent() != image.extent()) throw DataError("bundle: image/mask shape mismatch");
    if (mask.num_classes() != bundle.num_classes) throw DataError("bundle: mask class count differs from bundle");
    if (!kept.count(bundle.sources[i]))
      throw DataError("bundle: " + bundle.sources[i] + " is not marked kept in the filter report");
    const std::string stem = fmt::format("{:05d}", i);
    const std::string image_rel = "images/" + stem + ".png";
    const std::string mask_rel = "masks/" + stem + ".png";
    write_image(dir / image_rel, image);
    write_mask(dir / mask_rel, mask);
    items.push_back({{"index", i},
                     {"source", bundle.sources[i]},
                     {"image", image_rel},
                     {"image_sha256", sha256_file(dir / image_rel)},
                     {"mask", mask_rel},
                     {"mask_sha256", sha256_file(dir / mask_rel)}});
  }
  fsutil::write_text_atomic(dir / "filter_report.csv", bundle.filter_report_csv);

  const auto& pv = bundle.provenance;
  json manifest{
      {"format", kBundleFormat},
      {"site_id", bundle.site_id},
      {"modality", bundle.modality},
      {"num_classes", bundle.num_classes},
      {"spacing", {bundle.spacing.row_mm, bundle.spacing.col_mm}},
      {"provenance",
       {{"seed", pv.seed},
        {"n_steps_kimg", pv.n_steps_kimg},
        {"n_gen", pv.n_gen},
        {"plan_hash", pv.plan_hash},
        {"generator_version", pv.generator_version}}},
      {"filter",
       {{"report", "filter_report.csv"},
        {"report_sha256", sha256_hex(bundle.filter_report_csv)},
        {"threshold", bundle.threshold},
        {"percentile", bundle.percentile}}},
      {"items", std::move(items)},
  };
  const std::string content_hash = hash_of(manifest, bundle.filter_report_csv);
  manifest["content_hash"] = content_hash;
  fsutil::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return content_hash;
}

std::string compute_bundle_hash(const fs::path& dir) {
  json manifest = fsutil::read_json_file(dir / "manifest.json");
  manifest.erase("content_hash");
  return hash_of(manifest, fsutil::read_text(dir / "filter_report.csv"));
}

SyntheticBundle load_bundle(const fs::path& dir) {
  const std::string where = "bundle " + dir.string();
  if (!fs::exists(dir / "manifest.json")) throw DataError(where + ": missing manifest");
  json manifest = fsutil::read_json_file(dir / "manifest.json");
  const std::string report = fsutil::read_text(dir / "filter_report.csv");
  SyntheticBundle b;
  try {
    if (manifest.at("format").get<std::string>() != kBundleFormat) throw DataError(where + ": unknown format");
    const std::string recorded = manifest.at("content_hash").get<std::string>();
    json body = manifest;
    body.erase("content_hash");
    if (hash_of(body, report) != recorded) throw DataError(where + ": content hash mismatch");
    const json& filter = manifest.at("filter");
    if (filter.at("report_sha256").get<std::string>() != sha256_hex(report))
      throw DataError(where + ": filter report hash mismatch");

    b.site_id = manifest.at("site_id").get<std::string>();
    b.modality = manifest.at("modality").get<std::string>();
    b.num_classes = manifest.at("num_classes").get<int>();
    const auto sp = manifest.at("spacing").get<std::vector<double>>();
    if (sp.size() != 2) throw DataError(where + ": spacing must have two entries");
    b.spacing = {sp[0], sp[1]};
    const json& pv = manifest.at("provenance");
    b.provenance = {pv.at("seed").get<std::uint64_t>(), pv.at("n_steps_kimg").get<std::size_t>(),
                    pv.at("n_gen").get<std::size_t>(), pv.at("plan_hash").get<std::string>(),
                    pv.at("generator_version").get<std::string>()};
    b.threshold = filter.at("threshold").get<double>();
    b.percentile = filter.at("percentile").get<double>();
    b.filter_report_csv = report;

    const std::set<std::string> kept = kept_refs(report, where);
    std::size_t expected_index = 0;
    for (const auto& item : manifest.at("items")) {
      if (item.at("index").get<std::size_t>() != expected_index++) throw DataError(where + ": items out of order");
      const std::string image_rel = item.at("image").get<std::string>();
      const std::string mask_rel = item.at("mask").get<std::string>();
      if (sha256_file(dir / image_rel) != item.at("image_sha256").get<std::string>())
        throw DataError(where + ": hash mismatch for " + image_rel);
      if (sha256_file(dir / mask_rel) != item.at("mask_sha256").get<std::string>())
        throw DataError(where + ": hash mismatch for " + mask_rel);
      const std::string source = item.at("source").get<std::string>();
      if (!kept.count(source)) throw DataError(where + ": " + source + " did not pass the memorization filter");
      b.images.push_back(read_image(dir / image_rel, b.spacing));
      b.masks.push_back(read_mask(dir / mask_rel, b.num_classes));
      if (b.masks.back().extent() != b.images.back().extent())
        throw DataError(where + ": image/mask shape mismatch for " + image_rel);
      b.sources.push_back(source);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  return b;
}

void check_no_real_images(const SyntheticBundle& bundle, const Dataset& real) {
  std::unordered_set<std::string> keys;
  for (const Item* item : real.items()) keys.insert(image_key(item->image));
  for (std::size_t i = 0; i < bundle.images.size(); ++i)
    if (keys.count(image_key(bundle.images[i])))
      throw DataError("bundle " + bundle.site_id + ": image " + bundle.sources[i] + " is a copy of a real image");
}

MergedSynthetic merge_bundles(std::span<const fs::path> bundle_dirs, const fs::path& merged_dir) {
  if (bundle_dirs.empty()) throw DataError("merge: no bundles");
  struct Loaded {
    SyntheticBundle bundle;
    std::string location;
    std::string content_hash;
  };
  std::vector<Loaded> loaded;
  for (const auto& dir : bundle_dirs) {
    SyntheticBundle b = load_bundle(dir);
    std::string location = fs::relative(dir, merged_dir).generic_string();
    if (location.empty()) location = fs::absolute(dir).generic_string();
    loaded.push_back({std::move(b), std::move(location), compute_bundle_hash(dir)});
  }
  std::sort(loaded.begin(), loaded.end(),
            [](const Loaded& a, const Loaded& b) { return a.bundle.site_id < b.bundle.site_id; });
  for (std::size_t i = 1; i < loaded.size(); ++i)
    if (loaded[i].bundle.site_id == loaded[i - 1].bundle.site_id)
      throw DataError("merge: two bundles from site " + loaded[i].bundle.site_id);

  MergedSynthetic out;
  Dataset& d = out.data;
  d.site_id = "merged";
  d.num_classes = loaded.front().bundle.num_classes;
  d.modality = loaded.front().bundle.modality;
  json bundles = json::array();
  json items = json::array();
  std::size_t n_items = 0;
  for (auto& l : loaded) {
    SyntheticBundle& b = l.bundle;
    if (b.num_classes != d.num_classes)
      throw DataError(fmt::format("merge: class-count inconsistency ({} has {}, {} has {})",
                                  loaded.front().bundle.site_id, d.num_classes, b.site_id, b.num_classes));
    if (b.modality != d.modality) d.modality = "mixed";
    bundles.push_back({{"site_id", b.site_id},
                       {"location", l.location},
                       {"content_hash", l.content_hash},
                       {"n_items", b.images.size()}});
    PatientRecord patient{b.site_id, b.spacing, {}};
    for (std::size_t i = 0; i < b.images.size(); ++i) {
      items.push_back({{"site_id", b.site_id}, {"index", i}, {"source", b.sources[i]}});
      patient.items.push_back(Item{b.site_id + "/" + std::to_string(i), std::move(b.images[i]), std::move(b.masks[i])});
    }
    n_items += patient.items.size();
    if (!patient.items.empty()) d.patients.push_back(std::move(patient));
  }
  const json manifest{{"format", kMergedFormat},
                      {"num_classes", d.num_classes},
                      {"n_items", n_items},
                      {"bundles", std::move(bundles)},
                      {"items", std::move(items)}};
  out.manifest_json = manifest.dump(2) + "\n";
  return out;
}

MergedSynthetic write_merged(std::span<const fs::path> bundle_dirs, const fs::path& merged_dir) {
  fs::create_directories(merged_dir);
  MergedSynthetic merged = merge_bundles(bundle_dirs, merged_dir);
  fsutil::write_text_atomic(merged_dir / "manifest.json", merged.manifest_json);
  return merged;
}

MergedSynthetic load_merged(const fs::path& merged_dir) {
  const std::string text = fsutil::read_text(merged_dir / "manifest.json");
  const json manifest = fsutil::parse_json(text, (merged_dir / "manifest.json").string());
  std::vector<fs::path> dirs;
  try {
    if (manifest.at("format").get<std::string>() != kMergedFormat) throw DataError("merged manifest: unknown format");
    for (const auto& b : manifest.at("bundles")) {
      const fs::path location = b.at("location").get<std::string>();
      const fs::path dir = location.is_absolute() ? location : merged_dir / location;
      if (compute_bundle_hash(dir) != b.at("content_hash").get<std::string>())
        throw DataError("merged manifest: bundle " + dir.string() + " changed since the merge");
      dirs.push_back(dir);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("merged manifest: " + std::string(e.what()));
  }
  MergedSynthetic merged = merge_bundles(dirs, merged_dir);
  if (merged.manifest_json != text) throw DataError("merged manifest does not match its bundles");
  return merged;
}

}  // namespace synthfed
