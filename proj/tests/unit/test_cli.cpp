#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "synthfed/cli.hpp"
#include "synthfed/embedding.hpp"
#include "test_util.hpp"

using namespace synthfed;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"--help"}).out.find("experiment") != std::string::npos);
  CHECK(run({"bogus"}).code == kExitUsage);
  CHECK(run({"plan"}).code == kExitUsage);
  CHECK(run({"split", "--dataset", "x", "--seed", "abc"}).code == kExitUsage);
  CHECK(run({"evaluate", "--dataset", "d", "--model", "m", "--fold", "7"}).code == kExitUsage);
}

TEST_CASE("data errors exit 2") {
  testutil::TempDir dir("cli");
  const Result r = run({"fingerprint", "--dataset", (dir / "nothing").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("manifest") != std::string::npos);
  std::ofstream(dir / "bad.emb") << "garbage";
  CHECK(run({"fid", "--a", (dir / "bad.emb").string(), "--b", (dir / "bad.emb").string()}).code == kExitData);
}

TEST_CASE("toy data, plan and split") {
  testutil::TempDir dir("cli");
  REQUIRE(run({"toy-data", "--out", dir.path().string(), "--sites", "2", "--patients", "6", "--size", "32"}).code == 0);
  const std::string a = (dir / "A").string();
  const Result plan = run({"plan", "--dataset", a});
  REQUIRE(plan.code == 0);
  const auto doc = nlohmann::json::parse(plan.out);
  CHECK(doc.at("budget").at("n_gen").get<int>() == 120);
  CHECK(doc.at("seg_plan").at("patch_size").at(0).get<int>() == 32);
  const Result split = run({"split", "--dataset", a, "--seed", "4"});
  REQUIRE(split.code == 0);
  CHECK(nlohmann::json::parse(split.out).size() == 5);
}

TEST_CASE("step-by-step pipeline through the CLI") {
  testutil::TempDir dir("cli");
  auto p = [&](const char* rel) { return (dir / rel).string(); };
  REQUIRE(run({"toy-data", "--out", p("toy"), "--patients", "10", "--size", "32"}).code == 0);
  const std::vector<std::string> data{"--dataset", p("toy/A"), "--fold", "1", "--seed", "2"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), data.begin(), data.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  REQUIRE(run(with({"train-gen"}, {"--out", p("gen.bin")})).code == 0);
  REQUIRE(run({"synthesize", "--generator", p("gen.bin"), "--out", p("s.bin"), "--seed", "3"}).code == 0);
  REQUIRE(
      run(with({"filter"}, {"--samples", p("s.bin"), "--out", p("rep.csv"), "--calibration", p("cal.json")})).code ==
      0);
  REQUIRE(run(with({"pretrain"}, {"--epochs", "5", "--out", p("seg.bin")})).code == 0);
  const Result bundle =
      run(with({"bundle"}, {"--samples", p("s.bin"), "--report", p("rep.csv"), "--calibration", p("cal.json"),
                            "--segmenter", p("seg.bin"), "--generator", p("gen.bin"), "--out", p("bundle")}));
  REQUIRE(bundle.code == 0);
  REQUIRE(run({"merge", "--bundle", p("bundle"), "--out", p("merged")}).code == 0);
  REQUIRE(run({"pretrain", "--merged", p("merged"), "--epochs", "5", "--out", p("general.bin")}).code == 0);
  REQUIRE(run(with({"finetune"}, {"--model", p("general.bin"), "--epochs", "5", "--out", p("ft.bin")})).code == 0);
  const Result ev = run(with({"evaluate"}, {"--model", p("ft.bin"), "--setting", "syn-real-A", "--out", p("m.csv")}));
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("syn-real-A,A,DS,1,") != std::string::npos);
  REQUIRE(run(with({"evaluate"}, {"--model", p("seg.bin"), "--setting", "real-A", "--out", p("m.csv")})).code == 0);
  std::ifstream in(p("m.csv"));
  const std::string csv((std::istreambuf_iterator<char>(in)), {});
  CHECK(csv.find("real-A,A,HD95,1,") != std::string::npos);
  const Result stats = run({"stats", "--report", p("m.csv")});
  CHECK(stats.code == 0);
  CHECK(stats.out.find("Wilcoxon") != std::string::npos);
  // a segmenter planned for other data cannot label this site's bundle
  REQUIRE(run({"toy-data", "--out", p("big"), "--sites", "1", "--patients", "6", "--size", "64"}).code == 0);
  REQUIRE(run({"pretrain", "--dataset", p("big/A"), "--epochs", "2", "--out", p("other.bin")}).code == 0);
  CHECK(run(with({"bundle"}, {"--samples", p("s.bin"), "--report", p("rep.csv"), "--calibration", p("cal.json"),
                              "--segmenter", p("other.bin"), "--generator", p("gen.bin"), "--out", p("b2")}))
            .code == kExitData);
}

TEST_CASE("fid and audit read EMB1 files") {
  testutil::TempDir dir("cli");
  EmbeddingSet s(2);
  const std::vector<float> a{0, 1}, b{2, 3}, c{4, 1};
  s.add(a, "a");
  s.add(b, "b");
  s.add(c, "c");
  write_emb1(dir / "x.emb", s);
  const Result fid = run({"fid", "--a", (dir / "x.emb").string(), "--b", (dir / "x.emb").string()});
  CHECK(fid.code == 0);
  CHECK(std::abs(std::stod(fid.out)) < 1e-9);
  const Result audit = run({"audit", "--a", (dir / "x.emb").string(), "--b", (dir / "x.emb").string()});
  CHECK(audit.code == 0);
  CHECK(audit.out == "ref_a,ref_b,distance\na,a,0\nb,b,0\nc,c,0\n");
}
