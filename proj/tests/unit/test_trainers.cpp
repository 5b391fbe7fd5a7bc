#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "synthfed/error.hpp"
#include "synthfed/generator.hpp"
#include "synthfed/metrics.hpp"
#include "synthfed/rng.hpp"
#include "synthfed/segmenter.hpp"
#include "synthfed/toy_data.hpp"
#include "test_util.hpp"

using namespace synthfed;

namespace {

std::vector<Image2D> noise_images(std::size_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image2D> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(static_cast<std::size_t>(size) * size);
    for (auto& v : px) v = static_cast<float>(rng.uniform01());
    out.emplace_back(size, size, 1, px);
  }
  return out;
}

DatasetFingerprint square(int size, std::size_t n) {
  DatasetFingerprint f;
  f.median_size = {size, size};
  f.n_images = n;
  f.n_patients = n;
  return f;
}

ReferenceGenerator make_generator(int size, std::size_t n, std::uint64_t seed, GeneratorConfig cfg = {}) {
  const DatasetFingerprint f = square(size, n);
  return ReferenceGenerator(derive_gan_plan(derive_seg_plan(f)), derive_budget(f), seed, cfg);
}

std::vector<LabeledImage> labeled(const Dataset& d) {
  std::vector<LabeledImage> out;
  for (const Item* it : d.items()) out.push_back({&it->image, &*it->mask});
  return out;
}

}  // namespace

TEST_CASE("generator presents n_steps thousand images and fills every tile slot") {
  const auto images = noise_images(100, 32, 1);
  ReferenceGenerator g = make_generator(32, 100, 7);
  g.fit(images);
  CHECK(g.presentations() == 100000);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(g.library_size(r, c) == 100);
}

TEST_CASE("generator sampling is deterministic per seed") {
  ReferenceGenerator g = make_generator(32, 20, 3);
  g.fit(noise_images(20, 32, 2));
  CHECK(g.sample(5, 11) == g.sample(5, 11));
  CHECK(g.sample(5, 11) != g.sample(5, 12));
  CHECK(g.sample(0, 11).empty());
  for (const auto& s : g.sample(3, 1)) CHECK(s.extent() == Extent{32, 32});
}

TEST_CASE("zero noise and a one-image library reproduce a training image") {
  const auto images = noise_images(10, 32, 4);
  GeneratorConfig cfg;
  cfg.noise_amplitude = 0.0f;
  cfg.max_library = 1;
  ReferenceGenerator g = make_generator(32, 10, 5, cfg);
  g.fit(images);
  for (const auto& s : g.sample(8, 2)) {
    const bool is_copy = std::any_of(images.begin(), images.end(), [&](const Image2D& t) {
      return std::equal(t.pixels().begin(), t.pixels().end(), s.pixels().begin());
    });
    CHECK(is_copy);
  }
}

TEST_CASE("untrained generator cannot sample") {
  const ReferenceGenerator g = make_generator(32, 10, 5);
  CHECK_THROWS_AS(g.sample(1, 0), DataError);
}

TEST_CASE("generator and sample files round-trip") {
  testutil::TempDir dir("gen");
  ReferenceGenerator g = make_generator(16, 6, 9);
  g.fit(noise_images(6, 16, 8));
  g.save(dir / "g.bin");
  const ReferenceGenerator back = ReferenceGenerator::load(dir / "g.bin");
  CHECK(back.sample(4, 3) == g.sample(4, 3));
  CHECK(back.budget() == g.budget());
  CHECK(back.seed() == g.seed());
  const auto samples = g.sample(4, 3);
  save_samples(dir / "s.bin", samples);
  const auto loaded = load_samples(dir / "s.bin");
  REQUIRE(loaded.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(loaded[i] == quantize16(samples[i]));
  std::ofstream(dir / "bad.bin") << "SFSMjunk";
  CHECK_THROWS_AS(load_samples(dir / "bad.bin"), DataError);
}

TEST_CASE("segmenter learns the toy task") {
  ToyBenchmarkConfig cfg;
  const Dataset site = make_toy_site(cfg, 0);
  const auto data = labeled(site);
  const SegPlan plan = derive_seg_plan(fingerprint_dataset(site));
  const ReferenceSegmenter m = fit_segmenter(plan, 1, data, 50, 1.0);
  double sum = 0;
  for (const auto& li : data) {
    const SegMask pred = m.predict(*li.image);
    CHECK(pred.extent() == li.image->extent());
    sum += dice(*li.mask, pred, 1);
  }
  CHECK(sum / static_cast<double>(data.size()) > 0.9);
}

TEST_CASE("segmenter bookkeeping") {
  ToyBenchmarkConfig cfg;
  cfg.patients_per_site = 6;
  const Dataset site = make_toy_site(cfg, 1);
  const auto data = labeled(site);
  const SegPlan plan = derive_seg_plan(fingerprint_dataset(site));
  const ReferenceSegmenter a = fit_segmenter(plan, 1, data, 10, 1.0);

  CHECK(fit_segmenter(plan, 1, data, 0, 1.0, &a) == a);
  CHECK(fit_segmenter(plan, 1, data, 10, 1.0) == a);
  CHECK(fit_segmenter(plan, 1, data, 5, 1.0, &a) != a);

  testutil::TempDir dir("seg");
  a.save(dir / "m.bin");
  CHECK(ReferenceSegmenter::load(dir / "m.bin") == a);

  ReferenceSegmenter b(plan, 1);
  b.set_parameters(a.parameters());
  CHECK(b == a);
  const std::vector<float> wrong(3);
  CHECK_THROWS(b.set_parameters(wrong));
  CHECK_THROWS_AS(ReferenceSegmenter(plan, 1).predict(*data[0].image), DataError);
}

TEST_CASE("fedavg averaging") {
  const std::vector<float> zeros(4, 0.0f), twos(4, 2.0f), fours(4, 4.0f);
  const std::vector<double> equal{1, 1}, skew{3, 1};
  SUBCASE("identical models") {
    const std::vector<std::span<const float>> p{twos, twos};
    CHECK(fedavg_round(p, equal) == twos);
  }
  SUBCASE("midpoint") {
    const std::vector<std::span<const float>> p{zeros, twos};
    CHECK(fedavg_round(p, equal) == std::vector<float>(4, 1.0f));
  }
  SUBCASE("weights 3:1") {
    const std::vector<std::span<const float>> p{zeros, fours};
    CHECK(fedavg_round(p, skew) == std::vector<float>(4, 1.0f));
  }
  SUBCASE("mismatched inputs") {
    const std::vector<float> short_vec(3);
    const std::vector<std::span<const float>> p{zeros, short_vec};
    CHECK_THROWS(fedavg_round(p, equal));
    const std::vector<double> negative{1, -1};
    const std::vector<std::span<const float>> q{zeros, twos};
    CHECK_THROWS(fedavg_round(q, negative));
  }
}

TEST_CASE("property: fedavg is permutation-invariant and equals the weighted mean") {
  Rng rng(30);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 2 + rng.uniform_index(6), n = 1 + rng.uniform_index(40);
    std::vector<std::vector<float>> params(k, std::vector<float>(n));
    std::vector<double> weights(k);
    for (std::size_t i = 0; i < k; ++i) {
      weights[i] = static_cast<double>(1 + rng.uniform_index(100));
      for (auto& v : params[i]) v = static_cast<float>(rng.uniform(-5, 5));
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::span<const float>> p;
    for (auto& v : params) p.emplace_back(v);
    const auto base = fedavg_round(p, weights);
    for (int s = 0; s < 4; ++s) {
      rng.shuffle(order);
      std::vector<std::span<const float>> pp;
      std::vector<double> ww;
      for (auto i : order) {
        pp.emplace_back(params[i]);
        ww.push_back(weights[i]);
      }
      CHECK(fedavg_round(pp, ww) == base);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (std::size_t e = 0; e < n; ++e) {
      double expect = 0;
      for (std::size_t i = 0; i < k; ++i) expect += weights[i] / total * params[i][e];
      CHECK(base[e] == doctest::Approx(expect).epsilon(1e-5));
    }
  }
}
