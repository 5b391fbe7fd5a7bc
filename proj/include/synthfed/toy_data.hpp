#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "synthfed/core.hpp"

namespace synthfed {

/// Synthetic multi-site segmentation benchmark. Every image shows one
/// elliptical foreground object on a textured background inside a dark
/// frame; sites differ along a single shift parameter t in [0, max_shift]
/// that brightens the background, moves the object and enlarges it.
struct ToyBenchmarkConfig {
  int num_sites = 2;
  int patients_per_site = 20;
  int images_per_patient = 2;
  int image_size = 64;
  double max_shift = 1.0;
  std::uint64_t seed = 7;
};

/// "A", "B", ... for the first 26 sites, then "S26", "S27", ...
std::string toy_site_name(int index);

double toy_site_shift(const ToyBenchmarkConfig& cfg, int site_index);

Dataset make_toy_site(const ToyBenchmarkConfig& cfg, int site_index);
std::vector<Dataset> make_toy_benchmark(const ToyBenchmarkConfig& cfg);

}  // namespace synthfed
