#include "synthfed/config.hpp"

#include <fmt/format.h>

#include <set>
#include <toml.hpp>

#include "core/fs_util.hpp"
#include "synthfed/error.hpp"

namespace synthfed {

namespace fs = std::filesystem;

namespace {

// Typed accessors over one TOML table that also reject unknown keys.
class Section {
 public:
  Section(const toml::table& table, std::string name) : table_(table), name_(std::move(name)) {}

  void allow(std::initializer_list<std::string_view> keys) const {
    const std::set<std::string_view> known(keys);
    for (const auto& [key, node] : table_) {
      (void)node;
      if (!known.count(key.str())) throw UsageError(fmt::format("config: unknown key '{}{}'", prefix(), key.str()));
    }
  }

  std::optional<std::int64_t> integer(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return std::nullopt;
    if (auto v = n->value_exact<std::int64_t>()) return *v;
    throw type_error(key, "an integer");
  }

  std::optional<double> number(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return std::nullopt;
    if (auto v = n->value_exact<double>()) return *v;
    if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
    throw type_error(key, "a number");
  }

  std::optional<std::string> string(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return std::nullopt;
    if (auto v = n->value_exact<std::string>()) return *v;
    throw type_error(key, "a string");
  }

  template <typename T>
  std::optional<std::vector<T>> list(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return std::nullopt;
    const toml::array* arr = n->as_array();
    if (!arr) throw type_error(key, "an array");
    std::vector<T> out;
    for (const auto& item : *arr) {
      auto v = item.value_exact<T>();
      if (!v) throw type_error(key, "an array of uniform element type");
      out.push_back(*v);
    }
    return out;
  }

  const toml::table* table(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return nullptr;
    if (const toml::table* t = n->as_table()) return t;
    throw type_error(key, "a table");
  }

  const toml::array* array_of_tables(std::string_view key) const {
    const toml::node* n = table_.get(key);
    if (!n) return nullptr;
    if (const toml::array* a = n->as_array(); a && a->is_array_of_tables()) return a;
    throw type_error(key, "an array of tables");
  }

  std::string prefix() const { return name_.empty() ? std::string() : name_ + "."; }

 private:
  UsageError type_error(std::string_view key, std::string_view what) const {
    return UsageError(fmt::format("config: '{}{}' must be {}", prefix(), key, what));
  }
  const toml::table& table_;
  std::string name_;
};

int to_int(std::int64_t v, std::string_view key, std::int64_t lo, std::int64_t hi) {
  if (v < lo || v > hi) throw UsageError(fmt::format("config: '{}' must be in [{}, {}]", key, lo, hi));
  return static_cast<int>(v);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view toml_text, const fs::path& base_dir,
                                         std::string_view source_name) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source_name);
  } catch (const toml::parse_error& e) {
    throw UsageError(fmt::format("config: {} (line {})", e.description(), e.source().begin.line));
  }
  const Section top(root, "");
  top.allow({"name", "seed", "output", "percentile", "folds", "arms", "alpha", "workers", "training", "budget",
             "generator", "sites", "toy", "scaling"});

  ExperimentConfig cfg;
  ExperimentPlan& plan = cfg.plan;
  FederationConfig& fed = plan.federation;
  fed.run_name = top.string("name").value_or("experiment");
  if (fed.run_name.empty() || fed.run_name.find_first_of("/\\ ") != std::string::npos)
    throw UsageError("config: 'name' must be a non-empty word");
  if (auto seed = top.integer("seed")) {
    if (*seed < 0) throw UsageError("config: 'seed' must be non-negative");
    fed.seed = static_cast<std::uint64_t>(*seed);
  }
  plan.output = resolve(base_dir, top.string("output").value_or("out"));
  fed.percentile = top.number("percentile").value_or(kDefaultPercentile);
  if (!(fed.percentile >= 0.0 && fed.percentile <= 100.0)) throw UsageError("config: 'percentile' must be in [0, 100]");
  plan.alpha = top.number("alpha").value_or(0.01);
  if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) throw UsageError("config: 'alpha' must be in (0, 1)");
  if (auto w = top.integer("workers")) fed.workers = static_cast<std::size_t>(to_int(*w, "workers", 1, 256));
  if (auto folds = top.list<std::int64_t>("folds")) {
    plan.folds.clear();
    for (auto f : *folds) plan.folds.push_back(to_int(f, "folds", 0, kFoldCount - 1));
  }
  if (auto arms = top.list<std::string>("arms")) {
    fed.arms.clear();
    for (const auto& name : *arms) {
      auto arm = parse_arm(name);
      if (!arm) throw UsageError("config: unknown arm '" + name + "'");
      fed.arms.push_back(*arm);
    }
    validate_arms(fed.arms);
  }

  if (const toml::table* t = top.table("training")) {
    const Section s(*t, "training");
    s.allow({"epochs", "finetune_epochs", "base_rate", "fedavg_rounds"});
    if (auto v = s.integer("epochs")) fed.epochs = to_int(*v, "training.epochs", 1, 100000);
    if (auto v = s.integer("finetune_epochs")) fed.finetune_epochs = to_int(*v, "training.finetune_epochs", 0, 100000);
    if (auto v = s.number("base_rate")) fed.base_rate = *v;
    if (!(fed.base_rate > 0.0)) throw UsageError("config: 'training.base_rate' must be positive");
    if (auto v = s.integer("fedavg_rounds")) fed.fedavg_rounds = to_int(*v, "training.fedavg_rounds", 1, 100000);
  }
  if (const toml::table* t = top.table("budget")) {
    const Section s(*t, "budget");
    s.allow({"n_steps_kimg", "n_gen"});
    if (auto v = s.integer("n_steps_kimg"))
      fed.n_steps_override = static_cast<std::size_t>(to_int(*v, "budget.n_steps_kimg", 1, 1 << 30));
    if (auto v = s.integer("n_gen"))
      fed.n_gen_override = static_cast<std::size_t>(to_int(*v, "budget.n_gen", 1, 1 << 30));
  }
  if (const toml::table* t = top.table("generator")) {
    const Section s(*t, "generator");
    s.allow({"tile_grid", "noise_amplitude", "max_library"});
    if (auto v = s.integer("tile_grid")) fed.generator.tile_grid = to_int(*v, "generator.tile_grid", 1, 1024);
    if (auto v = s.number("noise_amplitude")) {
      if (!(*v >= 0.0 && *v <= 1.0)) throw UsageError("config: 'generator.noise_amplitude' must be in [0, 1]");
      fed.generator.noise_amplitude = static_cast<float>(*v);
    }
    if (auto v = s.integer("max_library"))
      fed.generator.max_library = static_cast<std::size_t>(to_int(*v, "generator.max_library", 0, 1 << 30));
  }
  if (const toml::array* sites = top.array_of_tables("sites")) {
    for (const auto& node : *sites) {
      const Section s(*node.as_table(), "sites[]");
      s.allow({"id", "dataset"});
      auto dataset = s.string("dataset");
      if (!dataset) throw UsageError("config: every [[sites]] entry needs 'dataset'");
      SiteSource src{s.string("id").value_or(""), resolve(base_dir, *dataset)};
      if (!fs::is_directory(src.dataset))
        throw UsageError("config: dataset directory not found: " + src.dataset.string());
      cfg.sites.push_back(std::move(src));
    }
  }
  if (const toml::table* t = top.table("toy")) {
    const Section s(*t, "toy");
    s.allow({"num_sites", "patients_per_site", "images_per_patient", "image_size", "max_shift", "seed"});
    ToyBenchmarkConfig toy;
    if (auto v = s.integer("num_sites")) toy.num_sites = to_int(*v, "toy.num_sites", 1, 64);
    if (auto v = s.integer("patients_per_site")) toy.patients_per_site = to_int(*v, "toy.patients_per_site", 5, 100000);
    if (auto v = s.integer("images_per_patient"))
      toy.images_per_patient = to_int(*v, "toy.images_per_patient", 1, 10000);
    if (auto v = s.integer("image_size")) toy.image_size = to_int(*v, "toy.image_size", 16, 4096);
    if (auto v = s.number("max_shift")) toy.max_shift = *v;
    if (auto v = s.integer("seed")) {
      if (*v < 0) throw UsageError("config: 'toy.seed' must be non-negative");
      toy.seed = static_cast<std::uint64_t>(*v);
    }
    cfg.toy = toy;
  }
  if (cfg.toy && !cfg.sites.empty()) throw UsageError("config: use either [[sites]] or [toy], not both");
  if (!cfg.toy && cfg.sites.empty()) throw UsageError("config: no sites ([[sites]] or [toy]) configured");
  if (const toml::table* t = top.table("scaling")) {
    const Section s(*t, "scaling");
    s.allow({"site_counts"});
    if (auto v = s.list<std::int64_t>("site_counts"))
      for (auto n : *v) plan.scaling_site_counts.push_back(to_int(n, "scaling.site_counts", 1, 64));
    const int available = cfg.toy ? cfg.toy->num_sites : static_cast<int>(cfg.sites.size());
    for (int n : plan.scaling_site_counts)
      if (n > available)
        throw UsageError(
            fmt::format("config: scaling.site_counts has {} but only {} sites are configured", n, available));
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  return parse_experiment_config(fsutil::read_text(path), path.parent_path(), path.string());
}

std::vector<Dataset> load_sites(const ExperimentConfig& cfg) {
  if (cfg.toy) return make_toy_benchmark(*cfg.toy);
  std::vector<Dataset> out;
  for (const auto& src : cfg.sites) {
    Dataset d = load_dataset(src.dataset);
    if (!src.id.empty() && src.id != d.site_id)
      throw DataError(fmt::format("config: site id '{}' does not match dataset site_id '{}'", src.id, d.site_id));
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace synthfed
