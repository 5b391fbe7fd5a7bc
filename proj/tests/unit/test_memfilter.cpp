#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "oracles.hpp"
#include "synthfed/embedding.hpp"
#include "synthfed/error.hpp"
#include "synthfed/memfilter.hpp"
#include "synthfed/rng.hpp"
#include "test_util.hpp"

using namespace synthfed;

namespace {

using Rows = std::vector<std::vector<float>>;

Rows random_rows(Rng& rng, std::size_t n, std::size_t dim) {
  Rows rows(n, std::vector<float>(dim));
  for (auto& r : rows)
    for (auto& v : r) v = static_cast<float>(rng.uniform(-1, 1));
  return rows;
}

EmbeddingSet to_set(const Rows& rows, const std::string& prefix) {
  EmbeddingSet s(rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) s.add(rows[i], prefix + std::to_string(i));
  return s;
}

// One image per patient; the dataset only drives the patient split.
Dataset patients(std::size_t n) {
  Dataset d;
  d.site_id = "R";
  for (std::size_t i = 0; i < n; ++i)
    d.patients.push_back({"p" + std::to_string(i), {}, {{"r" + std::to_string(i), Image2D(1, 1, 1, {0.f}), {}}}});
  return d;
}

double pearson_naive(const std::vector<float>& a, const std::vector<float>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Image2D pattern(Rng& rng, int size) {
  std::vector<float> px(static_cast<std::size_t>(size) * size);
  // rows carry the identity, columns are nearly symmetric
  std::vector<float> row_level(size);
  for (auto& v : row_level) v = static_cast<float>(rng.uniform01());
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      px[static_cast<std::size_t>(r) * size + c] =
          std::clamp(row_level[r] + static_cast<float>(rng.uniform(-0.03, 0.03)), 0.0f, 1.0f);
  return Image2D(size, size, 1, px);
}

Image2D mirrored(const Image2D& im) {
  std::vector<float> px(im.pixels().size());
  for (int r = 0; r < im.height(); ++r)
    for (int c = 0; c < im.width(); ++c)
      px[static_cast<std::size_t>(r) * im.width() + c] = im.at(r, im.width() - 1 - c);
  return Image2D(im.height(), im.width(), 1, px);
}

}  // namespace

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i + 1;
  CHECK(kDefaultPercentile == 5.0);
  CHECK(nearest_rank_percentile(v, 5.0) == 5.0);
  CHECK(nearest_rank_percentile(v, 0.0) == 1.0);
  CHECK(nearest_rank_percentile(v, 100.0) == 100.0);
  const std::vector<double> three{3, 7, 9};
  CHECK(nearest_rank_percentile(three, 0.0) == 3.0);
  CHECK(nearest_rank_percentile(three, 50.0) == 7.0);
}

TEST_CASE("nearest neighbours match the brute-force oracle on 500x500") {
  Rng rng(10);
  const Rows q = random_rows(rng, 500, 32), b = random_rows(rng, 500, 32);
  const auto got = nearest_neighbors(to_set(q, "q"), to_set(b, "b"), 2);
  const auto want = oracle::brute_nn(q, b);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].query == i);
    CHECK(got[i].neighbor == want[i].index);
    CHECK(std::fabs(got[i].distance - want[i].distance) <= 1e-6);
  }
}

TEST_CASE("nearest neighbours: subsets and single pairs") {
  Rng rng(11);
  const Rows b = random_rows(rng, 20, 8);
  const Rows a(b.begin() + 5, b.begin() + 12);
  for (const auto& m : nearest_neighbors(to_set(a, "a"), to_set(b, "b"))) {
    CHECK(m.distance == 0.0);
    CHECK(m.neighbor == m.query + 5);
  }
  const Rows one = random_rows(rng, 1, 8), other = random_rows(rng, 1, 8);
  const auto audit = nearest_neighbor_audit(to_set(one, "x"), to_set(other, "y"));
  REQUIRE(audit.size() == 1);
  CHECK(audit[0].ref_a == "x0");
  CHECK(audit[0].ref_b == "y0");
}

TEST_CASE("toy embedding provider") {
  const ToyEmbeddingProvider p;
  const Image2D zeros(8, 8, 1, std::vector<float>(64, 0.0f));
  const auto z = p.embed(zeros, "z");
  CHECK(z.size() == ToyEmbeddingProvider::kDimension);
  CHECK(std::all_of(z.begin(), z.end(), [](float v) { return v == 0.0f; }));
  Rng rng(12);
  std::vector<Image2D> images{pattern(rng, 20), pattern(rng, 20), pattern(rng, 20)};
  CHECK(p.embed(images[0], "a") == p.embed(images[0], "b"));
  std::vector<ImageRef> refs{{"i0", &images[0]}, {"i1", &images[1]}, {"i2", &images[2]}};
  const EmbeddingSet set = embed_dataset(refs, p);
  REQUIRE(set.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(set.ref(i) == "i" + std::to_string(i));
    const auto v = p.embed(images[i], "");
    CHECK(std::equal(v.begin(), v.end(), set.row(i).begin()));
  }
}

TEST_CASE("mirrored images find their originals") {
  Rng rng(13);
  std::vector<Image2D> originals, mirrors;
  for (int i = 0; i < 50; ++i) {
    originals.push_back(pattern(rng, 32));
    mirrors.push_back(mirrored(originals.back()));
  }
  const ToyEmbeddingProvider p;
  std::vector<ImageRef> a, b;
  for (int i = 0; i < 50; ++i) {
    a.push_back({"m" + std::to_string(i), &mirrors[i]});
    b.push_back({"o" + std::to_string(i), &originals[i]});
  }
  const auto rows = nearest_neighbor_audit(embed_dataset(a, p), embed_dataset(b, p));
  int hits = 0;
  for (const auto& r : rows) hits += r.ref_a.substr(1) == r.ref_b.substr(1);
  CHECK(hits >= 45);
}

TEST_CASE("calibration: an exact copy contributes distance 0") {
  Rng rng(14);
  Rows rows = random_rows(rng, 10, 6);
  const Dataset d = patients(10);
  const PatientSplit split = split_patients(d, 3);
  rows[split.query_items[0]] = rows[split.reference_items[0]];
  const ThresholdCalibration cal = calibrate_threshold(to_set(rows, "r"), split, 0.0, 3);
  CHECK(cal.distances.front() == 0.0);
  CHECK(cal.threshold == 0.0);
  CHECK(cal.distances.size() == split.query_items.size());
}

TEST_CASE("patient split: 50/50, extra patient to the reference side") {
  const PatientSplit s = split_patients(patients(7), 1);
  CHECK(s.query_patients.size() == 3);
  CHECK(s.reference_patients.size() == 4);
  CHECK(split_patients(patients(7), 1).query_items == s.query_items);
  CHECK_THROWS_AS(split_patients(patients(1), 1), DataError);
}

TEST_CASE("calibration is deterministic") {
  Rng rng(15);
  const EmbeddingSet set = to_set(random_rows(rng, 30, 8), "r");
  const Dataset d = patients(30);
  const auto a = calibrate_threshold(set, split_patients(d, 9), 5.0, 9);
  const auto b = calibrate_threshold(set, split_patients(d, 9), 5.0, 9);
  CHECK(a.threshold == b.threshold);
  CHECK(a.distances == b.distances);
  CHECK(std::is_sorted(a.distances.begin(), a.distances.end()));
}

TEST_CASE("filter verdicts") {
  Rng rng(16);
  const Rows real = random_rows(rng, 20, 8);
  const EmbeddingSet real_set = to_set(real, "r");
  ThresholdCalibration cal;
  cal.threshold = 0.1;

  SUBCASE("copies of real images are all discarded") {
    const auto rep = filter_synthetic(to_set(Rows(real.begin(), real.begin() + 6), "s"), real_set, cal);
    CHECK(rep.n_total == 6);
    CHECK(rep.n_discarded == 6);
  }
  SUBCASE("far images are all kept") {
    Rows far = random_rows(rng, 5, 8);
    for (auto& r : far)
      for (auto& v : r) v += 10.0f;
    CHECK(filter_synthetic(to_set(far, "s"), real_set, cal).n_discarded == 0);
  }
  SUBCASE("one planted duplicate among five") {
    Rows syn = random_rows(rng, 5, 8);
    for (auto& r : syn)
      for (auto& v : r) v += 3.0f;
    syn[2] = real[7];
    const auto rep = filter_synthetic(to_set(syn, "s"), real_set, cal);
    CHECK(rep.n_total == 5);
    CHECK(rep.n_discarded == 1);
    CHECK(rep.entries[2].verdict == Verdict::Discarded);
    CHECK(rep.entries[2].nn_distance == 0.0);
    CHECK(rep.entries[2].nn_real_ref == "r7");
  }
}

TEST_CASE("property: planted duplicates are discarded whenever the threshold is positive") {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n_real = 6 + rng.uniform_index(20);
    const Rows real = random_rows(rng, n_real, 4);
    const Dataset d = patients(n_real);
    const auto cal = calibrate_threshold(to_set(real, "r"), split_patients(d, t), rng.uniform(1, 100), t);
    if (!(cal.threshold > 0.0)) continue;
    Rows syn = random_rows(rng, 10, 4);
    std::vector<std::size_t> planted;
    for (std::size_t i = 0; i < syn.size(); i += 3) {
      syn[i] = real[rng.uniform_index(n_real)];
      planted.push_back(i);
    }
    const auto rep = filter_synthetic(to_set(syn, "s"), to_set(real, "r"), cal);
    for (std::size_t i : planted) CHECK(rep.entries[i].verdict == Verdict::Discarded);
  }
}

TEST_CASE("property: with p = 0 every kept image is at least the minimum real-to-real distance away") {
  Rng rng(18);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n_real = 4 + rng.uniform_index(30);
    const Rows real = random_rows(rng, n_real, 3);
    const Dataset d = patients(n_real);
    const PatientSplit split = split_patients(d, t);
    const auto cal = calibrate_threshold(to_set(real, "r"), split, 0.0, t);
    // oracle: minimum over query-to-reference pairs
    Rows q, ref;
    for (auto i : split.query_items) q.push_back(real[i]);
    for (auto i : split.reference_items) ref.push_back(real[i]);
    double min_rr = std::numeric_limits<double>::infinity();
    for (const auto& m : oracle::brute_nn(q, ref)) min_rr = std::min(min_rr, m.distance);
    CHECK(std::fabs(cal.threshold - min_rr) <= 1e-6);
    const Rows syn = random_rows(rng, 40, 3);
    const auto rep = filter_synthetic(to_set(syn, "s"), to_set(real, "r"), cal);
    const auto nn = oracle::brute_nn(syn, real);
    for (std::size_t i = 0; i < syn.size(); ++i)
      if (rep.entries[i].verdict == Verdict::Kept) CHECK(nn[i].distance >= min_rr - 1e-6);
  }
}

TEST_CASE("memorization report CSV round-trip") {
  MemorizationReport rep;
  rep.entries.push_back({"A-syn00000", "p1/0", 0.25, Verdict::Kept});
  rep.entries.push_back({"A-syn00001", "odd,ref/1", 0.0, Verdict::Discarded});
  rep.n_total = 2;
  rep.n_discarded = 1;
  const auto back = parse_memorization_csv(rep.to_csv());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].nn_real_ref == "odd,ref/1");
  CHECK(back.entries[1].verdict == Verdict::Discarded);
  CHECK(back.entries[0].nn_distance == 0.25);
  CHECK(back.n_discarded == 1);
  CHECK_THROWS_AS(parse_memorization_csv("nonsense"), DataError);
}

TEST_CASE("correlation flagging") {
  Rng rng(19);
  const Rows real = random_rows(rng, 10, 16);
  const EmbeddingSet real_set = to_set(real, "r");

  SUBCASE("identical vector correlates 1 and is flagged") {
    const auto rep = correlation_flagging(to_set({real[4]}, "s"), real_set, 0.99);
    CHECK(rep.entries[0].max_correlation == doctest::Approx(1.0));
    CHECK(rep.entries[0].status == CorrelationStatus::Flagged);
  }
  SUBCASE("zero-variance vector is indeterminate") {
    const auto rep = correlation_flagging(to_set({std::vector<float>(16, 0.5f)}, "s"), real_set, 0.5);
    CHECK(rep.entries[0].status == CorrelationStatus::Indeterminate);
  }
  SUBCASE("uncorrelated after centering is clear") {
    Rows two{{1, -1, 0, 0}, {0, 0, 1, -1}};
    const Rows syn{{1, 1, -1, -1}};
    const auto rep = correlation_flagging(to_set(syn, "s"), to_set(two, "r"), 0.1);
    CHECK(rep.entries[0].max_correlation == doctest::Approx(0.0));
    CHECK(rep.entries[0].status == CorrelationStatus::Clear);
  }
  SUBCASE("automatic tau matches a brute-force reference") {
    const Rows syn = random_rows(rng, 10, 16);
    const Dataset d = patients(10);
    const PatientSplit split = split_patients(d, 4);
    const auto rep = correlation_flagging(to_set(syn, "s"), real_set, std::nullopt, &split);
    std::vector<double> maxima;
    for (auto q : split.query_items) {
      double best = -2;
      for (auto r : split.reference_items) best = std::max(best, pearson_naive(real[q], real[r]));
      maxima.push_back(best);
    }
    std::sort(maxima.begin(), maxima.end());
    const double tau = maxima[(95 * maxima.size() + 99) / 100 - 1];
    CHECK(rep.tau_auto);
    CHECK(rep.tau == doctest::Approx(tau).epsilon(1e-9));
    for (std::size_t i = 0; i < syn.size(); ++i) {
      double best = -2;
      for (const auto& r : real) best = std::max(best, pearson_naive(syn[i], r));
      CHECK(rep.entries[i].max_correlation == doctest::Approx(best).epsilon(1e-9));
      CHECK((rep.entries[i].status == CorrelationStatus::Flagged) == (best > tau));
    }
  }
}

TEST_CASE("EMB1 round-trip is bitwise") {
  testutil::TempDir dir("emb1");
  Rng rng(20);
  EmbeddingSet s(5);
  for (int i = 0; i < 10; ++i) {
    std::vector<float> v(5);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1e3, 1e3));
    s.add(v, "img_" + std::to_string(i) + ".png");
  }
  write_emb1(dir / "a.emb", s);
  const EmbeddingSet back = read_emb1(dir / "a.emb");
  CHECK(back.size() == 10);
  CHECK(back.dimension() == 5);
  CHECK(back.refs() == s.refs());
  CHECK(std::memcmp(back.data().data(), s.data().data(), s.data().size_bytes()) == 0);
  write_emb1(dir / "b.emb", s);
  auto slurp = [](const std::filesystem::path& f) {
    std::ifstream in(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.emb") == slurp(dir / "b.emb"));
  CHECK(encode_emb1(back) == encode_emb1(s));
}

TEST_CASE("EMB1 layout") {
  EmbeddingSet s(2);
  const std::vector<float> v{1.0f, -2.0f};
  s.add(v, "a");
  s.add(v, "b");
  const std::string bytes = encode_emb1(s);
  CHECK(bytes.substr(0, 4) == "EMB1");
  std::uint32_t count = 0, dim = 0;
  std::memcpy(&count, bytes.data() + 4, 4);
  std::memcpy(&dim, bytes.data() + 8, 4);
  CHECK(count == 2);
  CHECK(dim == 2);
  float f = 0;
  std::memcpy(&f, bytes.data() + 12 + 4, 4);
  CHECK(f == -2.0f);
  // reader accepts ids with or without a trailing newline
  CHECK(decode_emb1(bytes.substr(0, 12 + 16) + "a\nb").refs() == s.refs());
  CHECK(decode_emb1(bytes.substr(0, 12 + 16) + "a\nb\n").refs() == s.refs());
}

TEST_CASE("EMB1 rejects malformed files") {
  CHECK_THROWS_AS(decode_emb1("EMB2"), DataError);
  CHECK_THROWS_AS(decode_emb1(std::string("EMB1\x02\0\0\0\x02\0\0\0", 12)), DataError);
  EmbeddingSet s(1);
  const float v = 1.0f;
  s.add(std::span<const float>(&v, 1), "a");
  const std::string ok = encode_emb1(s);
  CHECK_THROWS_AS(decode_emb1(ok.substr(0, 12) + ok.substr(12, 4) + "a\nb\n"), DataError);
}
