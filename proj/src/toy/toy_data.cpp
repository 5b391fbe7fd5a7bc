#include "synthfed/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "synthfed/error.hpp"
#include "synthfed/rng.hpp"

namespace synthfed {

std::string toy_site_name(int index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return "S" + std::to_string(index);
}

double toy_site_shift(const ToyBenchmarkConfig& cfg, int site_index) {
  if (cfg.num_sites <= 1) return 0.0;
  return cfg.max_shift * site_index / (cfg.num_sites - 1);
}

namespace {

constexpr int kFrame = 2;

struct Blob {
  double cy, cx, ry, rx;
};

Item make_item(const std::string& ref, double t, const Blob& blob, int size, Rng& rng) {
  const double bg = 0.15 + 0.40 * t;
  const double fg = 0.85 - 0.05 * t;
  const double freq_y = rng.uniform(1.0, 3.0);
  const double freq_x = rng.uniform(1.0, 3.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<float> pixels(static_cast<std::size_t>(size) * size);
  std::vector<std::uint8_t> labels(pixels.size(), 0);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * size + c;
      if (r < kFrame || c < kFrame || r >= size - kFrame || c >= size - kFrame) {
        pixels[i] = 0.0f;
        continue;
      }
      const double dy = (r - blob.cy) / blob.ry;
      const double dx = (c - blob.cx) / blob.rx;
      const bool inside = dy * dy + dx * dx <= 1.0;
      const double texture = 0.05 * std::sin(2.0 * std::numbers::pi * (freq_y * r + freq_x * c) / size + phase);
      const double noise = rng.uniform(-0.05, 0.05);
      const double v = (inside ? fg : bg) + texture + noise;
      pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      labels[i] = inside ? 1 : 0;
    }
  }
  // Same mapping load_dataset applies to a 16-bit PNG, so saved toy sites
  // load back bit-identical.
  std::vector<std::uint16_t> samples(pixels.size());
  std::transform(pixels.begin(), pixels.end(), samples.begin(), to_u16);
  Image2D image(size, size, 1, normalize_samples(samples, 65535));
  return Item{ref, std::move(image), SegMask(size, size, 1, std::move(labels))};
}

}  // namespace

Dataset make_toy_site(const ToyBenchmarkConfig& cfg, int site_index) {
  if (cfg.num_sites < 1 || cfg.patients_per_site < 1 || cfg.images_per_patient < 1 || cfg.image_size < 16)
    throw UsageError("toy benchmark: invalid configuration");
  const double t = toy_site_shift(cfg, site_index);
  const int size = cfg.image_size;
  Dataset d;
  d.site_id = toy_site_name(site_index);
  d.modality = "toy";
  d.num_classes = 1;
  Rng rng(derive_seed(cfg.seed, "toy-site", static_cast<std::uint64_t>(site_index)));
  for (int p = 0; p < cfg.patients_per_site; ++p) {
    PatientRecord patient;
    patient.id = d.site_id + "-p" + std::string(p < 10 ? "00" : (p < 100 ? "0" : "")) + std::to_string(p);
    const double centre = (0.38 + 0.24 * t) * size;
    const double radius = (0.13 + 0.05 * t) * size;
    Blob base{centre + rng.uniform(-0.08, 0.08) * size, centre + rng.uniform(-0.08, 0.08) * size,
              radius * rng.uniform(0.85, 1.15), radius * rng.uniform(0.85, 1.15)};
    for (int k = 0; k < cfg.images_per_patient; ++k) {
      Blob blob{base.cy + rng.uniform(-1.5, 1.5), base.cx + rng.uniform(-1.5, 1.5), base.ry * rng.uniform(0.95, 1.05),
                base.rx * rng.uniform(0.95, 1.05)};
      patient.items.push_back(make_item(patient.id + "/" + std::to_string(k), t, blob, size, rng));
    }
    d.patients.push_back(std::move(patient));
  }
  validate_dataset(d);
  return d;
}

std::vector<Dataset> make_toy_benchmark(const ToyBenchmarkConfig& cfg) {
  std::vector<Dataset> out;
  for (int s = 0; s < cfg.num_sites; ++s) out.push_back(make_toy_site(cfg, s));
  return out;
}

}  // namespace synthfed
