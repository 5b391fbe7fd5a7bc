#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "synthfed/core.hpp"
#include "synthfed/error.hpp"
#include "synthfed/png_io.hpp"
#include "synthfed/rng.hpp"

namespace synthfed {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Dataset::image_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.items.size();
  return n;
}

std::vector<const Item*> Dataset::items() const {
  std::vector<const Item*> out;
  out.reserve(image_count());
  for (const auto& p : patients)
    for (const auto& item : p.items) out.push_back(&item);
  return out;
}

void validate_dataset(const Dataset& d) {
  if (d.site_id.empty()) throw DataError("dataset: empty site_id");
  if (d.num_classes < 1) throw DataError("dataset " + d.site_id + ": num_classes must be >= 1");
  std::set<std::string> seen;
  for (const auto& p : d.patients) {
    if (p.id.empty()) throw DataError("dataset " + d.site_id + ": empty patient id");
    if (!seen.insert(p.id).second) throw DataError("dataset " + d.site_id + ": duplicate patient id " + p.id);
    if (p.items.empty()) throw DataError("dataset " + d.site_id + ": patient " + p.id + " has no items");
    for (const auto& item : p.items) {
      if (!item.mask) continue;
      if (item.mask->extent() != item.image.extent())
        throw DataError("dataset " + d.site_id + ": image/mask shape mismatch for " + item.ref);
      if (item.mask->num_classes() != d.num_classes)
        throw DataError("dataset " + d.site_id + ": mask class count differs for " + item.ref);
    }
  }
}

Dataset subset(const Dataset& d, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  Dataset out{d.site_id, d.modality, d.num_classes, {}};
  for (const auto& p : d.patients)
    if (wanted.count(p.id)) out.patients.push_back(p);
  if (out.patients.size() != wanted.size()) throw DataError("subset: unknown patient id in " + d.site_id);
  return out;
}

namespace {

// Lower median: element at index (n-1)/2 of the sorted values.
template <typename T>
T lower_median(std::vector<T> values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

DatasetFingerprint fingerprint_dataset(const Dataset& d) {
  const auto items = d.items();
  if (items.empty()) throw DataError("fingerprint: empty dataset");
  std::vector<int> rows, cols;
  std::vector<double> row_mm, col_mm;
  const int channels = items.front()->image.channels();
  for (const auto& p : d.patients) {
    for (const auto& item : p.items) {
      if (item.image.channels() != channels) throw DataError("fingerprint: mixed channel counts in " + d.site_id);
      rows.push_back(item.image.height());
      cols.push_back(item.image.width());
      row_mm.push_back(item.image.spacing().row_mm);
      col_mm.push_back(item.image.spacing().col_mm);
    }
  }
  DatasetFingerprint f;
  f.median_size = {lower_median(rows), lower_median(cols)};
  f.median_spacing = {lower_median(row_mm), lower_median(col_mm)};
  f.n_images = items.size();
  f.n_patients = d.patients.size();
  f.channels = channels;
  f.num_classes = d.num_classes;
  return f;
}

std::vector<FoldSplit> make_fold_splits(const Dataset& d, std::uint64_t seed) {
  const std::size_t n = d.patients.size();
  if (n < static_cast<std::size_t>(kFoldCount))
    throw DataError("fold split: need at least 5 patients, " + d.site_id + " has " + std::to_string(n));
  std::vector<std::string> ids;
  for (const auto& p : d.patients) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);

  std::vector<std::vector<std::string>> parts(kFoldCount);
  std::size_t cursor = 0;
  for (std::size_t f = 0; f < parts.size(); ++f) {
    const std::size_t size = n / kFoldCount + (f < n % kFoldCount ? 1 : 0);
    parts[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(cursor),
                    ids.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    std::sort(parts[f].begin(), parts[f].end());
    cursor += size;
  }

  std::vector<FoldSplit> out;
  for (int i = 0; i < kFoldCount; ++i) {
    FoldSplit s;
    s.fold_index = i;
    s.test_patients = parts[static_cast<std::size_t>(i)];
    s.val_patients = parts[static_cast<std::size_t>((i + 4) % kFoldCount)];
    for (int k = 1; k <= 3; ++k) {
      const auto& part = parts[static_cast<std::size_t>((i + k) % kFoldCount)];
      s.train_patients.insert(s.train_patients.end(), part.begin(), part.end());
    }
    std::sort(s.train_patients.begin(), s.train_patients.end());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Image2D load_image(const fs::path& path, Spacing spacing) {
  const png::Raster raster = png::read(path);
  return Image2D(raster.height, raster.width, raster.channels, normalize_samples(raster.samples, raster.max_value()),
                 spacing);
}

SegMask load_mask(const fs::path& path, int num_classes) {
  const png::Raster raster = png::read(path);
  if (raster.channels != 1) throw DataError(path.string() + ": mask must be single-channel");
  std::vector<std::uint8_t> labels(raster.samples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (raster.samples[i] > static_cast<std::uint16_t>(num_classes))
      throw DataError(path.string() + ": label value " + std::to_string(raster.samples[i]) +
                      " >= declared class count + 1");
    labels[i] = static_cast<std::uint8_t>(raster.samples[i]);
  }
  return SegMask(raster.height, raster.width, num_classes, std::move(labels));
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  const json manifest = read_json(root / "manifest.json");
  Dataset d;
  try {
    d.site_id = manifest.at("site_id").get<std::string>();
    d.modality = manifest.value("modality", std::string());
    d.num_classes = manifest.at("num_classes").get<int>();
    for (const auto& pj : manifest.at("patients")) {
      PatientRecord p;
      p.id = pj.at("id").get<std::string>();
      if (pj.contains("spacing")) {
        const auto sp = pj.at("spacing").get<std::vector<double>>();
        if (sp.size() != 2) throw DataError("manifest: spacing must have two entries for " + p.id);
        p.spacing = {sp[0], sp[1]};
      }
      for (const auto& ij : pj.at("items")) {
        const std::string ref = p.id + "/" + std::to_string(p.items.size());
        Image2D image = load_image(root / ij.at("image").get<std::string>(), p.spacing);
        std::optional<SegMask> mask;
        if (ij.contains("mask") && !ij.at("mask").is_null()) {
          mask = load_mask(root / ij.at("mask").get<std::string>(), d.num_classes);
          if (mask->extent() != image.extent())
            throw DataError("shape mismatch: image " + std::to_string(image.height()) + "x" +
                            std::to_string(image.width()) + " vs mask " + std::to_string(mask->height()) + "x" +
                            std::to_string(mask->width()) + " for " + ref);
        }
        p.items.push_back(Item{ref, std::move(image), std::move(mask)});
      }
      d.patients.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw DataError((root / "manifest.json").string() + ": " + e.what());
  }
  std::sort(d.patients.begin(), d.patients.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
  validate_dataset(d);
  return d;
}

void save_dataset(const Dataset& d, const fs::path& root) {
  validate_dataset(d);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  json patients = json::array();
  for (const auto& p : d.patients) {
    json items = json::array();
    for (std::size_t i = 0; i < p.items.size(); ++i) {
      const Item& item = p.items[i];
      const std::string stem = p.id + "_" + std::to_string(i);
      png::Raster raster{item.image.height(), item.image.width(), item.image.channels(), 16, {}};
      raster.samples.reserve(item.image.pixels().size());
      for (float v : item.image.pixels()) raster.samples.push_back(to_u16(v));
      const std::string image_rel = "images/" + stem + ".png";
      png::write(root / image_rel, raster);
      json entry{{"image", image_rel}};
      if (item.mask) {
        png::Raster mr{item.mask->height(), item.mask->width(), 1, 8, {}};
        mr.samples.assign(item.mask->labels().begin(), item.mask->labels().end());
        const std::string mask_rel = "masks/" + stem + ".png";
        png::write(root / mask_rel, mr);
        entry["mask"] = mask_rel;
      }
      items.push_back(std::move(entry));
    }
    patients.push_back({{"id", p.id}, {"spacing", {p.spacing.row_mm, p.spacing.col_mm}}, {"items", items}});
  }
  const json manifest{
      {"site_id", d.site_id}, {"modality", d.modality}, {"num_classes", d.num_classes}, {"patients", patients}};
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace synthfed
