#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "synthfed/federation.hpp"
#include "synthfed/toy_data.hpp"

namespace synthfed {

struct SiteSource {
  std::string id;  // must equal the dataset's site_id when given
  std::filesystem::path dataset;
};

/// A declarative experiment: the plan for run_experiment plus where the site
/// data comes from (dataset directories or the built-in toy benchmark).
struct ExperimentConfig {
  ExperimentPlan plan;
  std::vector<SiteSource> sites;
  std::optional<ToyBenchmarkConfig> toy;
};

/// Parses the TOML experiment format. Relative paths resolve against
/// `base_dir`. Unknown keys, wrong value types, out-of-range values and
/// missing dataset directories raise UsageError.
ExperimentConfig parse_experiment_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                                         std::string_view source_name = "config");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Loads (or generates) the datasets the config refers to.
std::vector<Dataset> load_sites(const ExperimentConfig& cfg);

}  // namespace synthfed
