#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "synthfed/image.hpp"
#include "synthfed/planner.hpp"

namespace synthfed {

struct GeneratorConfig {
  int tile_grid = 4;              // k x k tiles over the output size
  float noise_amplitude = 0.02f;  // uniform noise in [-a, a] added per pixel
  std::size_t max_library = 0;    // 0 = unbounded; 1 reproduces a single training image
};

/// Desk-scale stand-in for an unconditional image generator: a tile mosaic
/// sampler. Training presents n_steps * 1000 images (with replacement) and
/// records each distinct image's tiles with its presentation count; sampling
/// draws every tile slot independently, weighted by those counts.
///
/// The generator only ever sees images, never segmentation masks.
class ReferenceGenerator {
 public:
  ReferenceGenerator(GanPlan plan, TrainingBudget budget, std::uint64_t seed, GeneratorConfig config = {});

  void fit(const std::vector<Image2D>& train);
  std::vector<Image2D> sample(std::size_t n, std::uint64_t seed) const;

  bool trained() const noexcept { return !library_.empty(); }
  std::uint64_t presentations() const noexcept { return presentations_; }
  /// Distinct training images available to tile slot (row, col).
  std::size_t library_size(int slot_row, int slot_col) const;
  const GanPlan& plan() const noexcept { return plan_; }
  const GeneratorConfig& config() const noexcept { return config_; }
  const TrainingBudget& budget() const noexcept { return budget_; }
  std::uint64_t seed() const noexcept { return seed_; }

  void save(const std::filesystem::path& path) const;
  static ReferenceGenerator load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::uint64_t presentations = 0;
    std::vector<float> pixels;  // resized to plan.output_size
  };

  GanPlan plan_;
  TrainingBudget budget_;
  std::uint64_t seed_;
  GeneratorConfig config_;
  int channels_ = 1;
  std::uint64_t presentations_ = 0;
  std::vector<Entry> library_;
};

/// Sample file ("SFSM"): a count, then every image's shape, spacing and
/// pixels on the 16-bit grid. Images are quantized on save, so
/// load(save(x)) == quantize16(x).
void save_samples(const std::filesystem::path& path, std::span<const Image2D> images);
std::vector<Image2D> load_samples(const std::filesystem::path& path);

}  // namespace synthfed
