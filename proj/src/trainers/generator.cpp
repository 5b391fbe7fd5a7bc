#include "synthfed/generator.hpp"

#include <algorithm>
#include <numeric>

#include "binary_io.hpp"
#include "synthfed/error.hpp"
#include "synthfed/rng.hpp"

namespace synthfed {

namespace {
constexpr std::uint32_t kGeneratorVersion = 1;
constexpr std::uint32_t kSampleVersion = 1;
}  // namespace

ReferenceGenerator::ReferenceGenerator(GanPlan plan, TrainingBudget budget, std::uint64_t seed, GeneratorConfig config)
    : plan_(std::move(plan)), budget_(budget), seed_(seed), config_(config) {
  if (config_.tile_grid < 1) throw UsageError("generator: tile grid must be >= 1");
  if (config_.tile_grid > plan_.output_size.rows || config_.tile_grid > plan_.output_size.cols)
    throw UsageError("generator: tile grid larger than the output size");
  if (!(config_.noise_amplitude >= 0.0f)) throw UsageError("generator: noise amplitude must be >= 0");
}

void ReferenceGenerator::fit(const std::vector<Image2D>& train) {
  if (train.empty()) throw DataError("generator: empty training set");
  channels_ = train.front().channels();
  for (const auto& img : train)
    if (img.channels() != channels_) throw DataError("generator: mixed channel counts");

  library_.clear();
  std::vector<std::ptrdiff_t> slot_of(train.size(), -1);
  Rng rng(seed_);
  const std::uint64_t total = static_cast<std::uint64_t>(budget_.n_steps_kimg) * 1000;
  for (std::uint64_t step = 0; step < total; ++step) {
    const auto idx = static_cast<std::size_t>(rng.uniform_index(train.size()));
    if (slot_of[idx] >= 0) {
      ++library_[static_cast<std::size_t>(slot_of[idx])].presentations;
      continue;
    }
    if (config_.max_library != 0 && library_.size() >= config_.max_library) continue;
    const Image2D resized = resize_bilinear(train[idx], plan_.output_size);
    slot_of[idx] = static_cast<std::ptrdiff_t>(library_.size());
    library_.push_back({1, {resized.pixels().begin(), resized.pixels().end()}});
  }
  presentations_ = total;
}

std::size_t ReferenceGenerator::library_size(int slot_row, int slot_col) const {
  if (slot_row < 0 || slot_col < 0 || slot_row >= config_.tile_grid || slot_col >= config_.tile_grid)
    throw UsageError("generator: tile slot out of range");
  // Every presentation contributes all of an image's tiles, so the slots
  // share one library.
  return library_.size();
}

std::vector<Image2D> ReferenceGenerator::sample(std::size_t n, std::uint64_t seed) const {
  if (!trained()) throw DataError("generator: sample() before fit()");
  const int rows = plan_.output_size.rows;
  const int cols = plan_.output_size.cols;
  const int k = config_.tile_grid;
  std::vector<std::uint64_t> cumulative(library_.size());
  std::uint64_t running = 0;
  for (std::size_t i = 0; i < library_.size(); ++i) cumulative[i] = running += library_[i].presentations;

  Rng rng(seed);
  std::vector<Image2D> out;
  out.reserve(n);
  const float amp = config_.noise_amplitude;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<float> pixels(static_cast<std::size_t>(rows) * cols * channels_);
    for (int tr = 0; tr < k; ++tr) {
      for (int tc = 0; tc < k; ++tc) {
        const std::uint64_t draw = rng.uniform_index(running);
        const auto pick =
            static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), draw) - cumulative.begin());
        const auto& src = library_[pick].pixels;
        for (int r = tr * rows / k; r < (tr + 1) * rows / k; ++r) {
          const std::size_t begin = (static_cast<std::size_t>(r) * cols + tc * cols / k) * channels_;
          const std::size_t end = (static_cast<std::size_t>(r) * cols + (tc + 1) * cols / k) * channels_;
          std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
                    pixels.begin() + static_cast<std::ptrdiff_t>(begin));
        }
      }
    }
    if (amp > 0.0f)
      for (float& v : pixels) v = std::clamp(v + static_cast<float>(rng.uniform(-amp, amp)), 0.0f, 1.0f);
    out.emplace_back(rows, cols, channels_, std::move(pixels));
  }
  return out;
}

void ReferenceGenerator::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic("SFGN");
  w.put<std::uint32_t>(kGeneratorVersion);
  w.str(serialize_plan(PlanDocument{{}, {}, plan_, budget_}));
  w.put<std::uint64_t>(seed_);
  w.put<std::int32_t>(config_.tile_grid);
  w.put<float>(config_.noise_amplitude);
  w.put<std::uint64_t>(config_.max_library);
  w.put<std::int32_t>(channels_);
  w.put<std::uint64_t>(presentations_);
  w.put<std::uint64_t>(library_.size());
  for (const auto& e : library_) {
    w.put<std::uint64_t>(e.presentations);
    w.floats(e.pixels);
  }
  w.save(path);
}

ReferenceGenerator ReferenceGenerator::load(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic("SFGN");
  if (r.get<std::uint32_t>() != kGeneratorVersion) throw DataError(path.string() + ": unsupported version");
  const PlanDocument doc = parse_plan(r.str());
  const auto seed = r.get<std::uint64_t>();
  GeneratorConfig cfg;
  cfg.tile_grid = r.get<std::int32_t>();
  cfg.noise_amplitude = r.get<float>();
  cfg.max_library = r.get<std::uint64_t>();
  ReferenceGenerator g(doc.gan, doc.budget, seed, cfg);
  g.channels_ = r.get<std::int32_t>();
  g.presentations_ = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  const std::size_t expected =
      static_cast<std::size_t>(doc.gan.output_size.rows) * doc.gan.output_size.cols * g.channels_;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.presentations = r.get<std::uint64_t>();
    e.pixels = r.floats();
    if (e.pixels.size() != expected) throw DataError(path.string() + ": library entry size mismatch");
    g.library_.push_back(std::move(e));
  }
  r.expect_end();
  return g;
}

void save_samples(const std::filesystem::path& path, std::span<const Image2D> images) {
  binio::Writer w;
  w.magic("SFSM");
  w.put<std::uint32_t>(kSampleVersion);
  w.put<std::uint64_t>(images.size());
  std::vector<std::uint16_t> q;
  for (const auto& image : images) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(image.height()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(image.width()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(image.channels()));
    w.put<double>(image.spacing().row_mm);
    w.put<double>(image.spacing().col_mm);
    q.resize(image.pixels().size());
    std::transform(image.pixels().begin(), image.pixels().end(), q.begin(), to_u16);
    w.u16s(q);
  }
  w.save(path);
}

std::vector<Image2D> load_samples(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic("SFSM");
  if (r.get<std::uint32_t>() != kSampleVersion) throw DataError(path.string() + ": unsupported sample file version");
  const auto n = r.get<std::uint64_t>();
  std::vector<Image2D> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto h = static_cast<int>(r.get<std::uint32_t>());
    const auto w = static_cast<int>(r.get<std::uint32_t>());
    const auto c = static_cast<int>(r.get<std::uint32_t>());
    const double row_mm = r.get<double>();
    const double col_mm = r.get<double>();
    const auto q = r.u16s(static_cast<std::size_t>(h) * w * c);
    std::vector<float> pixels(q.size());
    std::transform(q.begin(), q.end(), pixels.begin(), from_u16);
    out.emplace_back(h, w, c, std::move(pixels), Spacing{row_mm, col_mm});
  }
  r.expect_end();
  return out;
}

}  // namespace synthfed
