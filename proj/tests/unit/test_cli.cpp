// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "seqfuse/checkpoint.hpp"
#include "seqfuse/cli.hpp"
#include "seqfuse/dataset.hpp"

using namespace seqfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("seqfuse-cli-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> small_gen(const std::string& dir) {
  return {"gen", "--out", dir, "--train-ids", "30", "--test-ids", "12", "--cameras", "4", "--dim", "6", "--seed", "3"};
}

}  // namespace

TEST_CASE("gen is deterministic and summarises camera coverage") {
  TempDir tmp;
  const Run a = cli(small_gen(tmp / "a"));
  REQUIRE(a.code == 0);
  const Run b = cli(small_gen(tmp / "b"));
  REQUIRE(b.code == 0);
  CHECK(slurp(tmp / "a/manifest.jsonl") == slurp(tmp / "b/manifest.jsonl"));
  CHECK(slurp(tmp / "a/spec.json") == slurp(tmp / "b/spec.json"));

  // Histogram rows "  n | ### count" sum to the identity total in the header.
  const std::regex header(R"(cameras per identity \((\d+) identities\))"), row(R"(\s+\d+ \| #+ (\d+))");
  std::smatch m;
  REQUIRE(std::regex_search(a.out, m, header));
  const int total = std::stoi(m[1]);
  int sum = 0;
  std::istringstream lines(a.out);
  for (std::string line; std::getline(lines, line);) {
    if (std::regex_match(line, m, row)) sum += std::stoi(m[1]);
  }
  CHECK(total == 42);
  CHECK(sum == total);

  // A spec file round trips through gen.
  const Run c = cli({"gen", "--out", tmp / "c", "--spec", tmp / "a/spec.json"});
  REQUIRE(c.code == 0);
  CHECK(slurp(tmp / "c/manifest.jsonl") == slurp(tmp / "a/manifest.jsonl"));
}

TEST_CASE("gen rejects invalid specs before writing") {
  TempDir tmp;
  Run r = cli({"gen", "--out", tmp / "one", "--cameras", "1"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("2 cameras") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "one"));
  r = cli({"gen", "--out", tmp / "neg", "--noise", "-1"});
  CHECK(r.code == kExitUsage);
  CHECK_FALSE(fs::exists(tmp / "neg"));
  // Single-camera worlds without a train split are allowed.
  r = cli({"gen", "--out", tmp / "solo", "--cameras", "1", "--train-ids", "0", "--test-ids", "3", "--dim", "2"});
  CHECK(r.code == 0);
}

TEST_CASE("train and eval produce identical bytes across runs") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  const std::string manifest = tmp / "d/manifest.jsonl";
  auto train = [&](const std::string& ckpt) {
    return cli({"train", "--manifest", manifest, "--checkpoint", ckpt, "--iters", "30", "--hidden", "8", "--quiet"});
  };
  REQUIRE(train(tmp / "m1.ckpt").code == 0);
  REQUIRE(train(tmp / "m2.ckpt").code == 0);
  CHECK(slurp(tmp / "m1.ckpt") == slurp(tmp / "m2.ckpt"));
  CHECK(slurp(tmp / "m1.ckpt.loss.csv") == slurp(tmp / "m2.ckpt.loss.csv"));
  CHECK(slurp(tmp / "m1.ckpt.loss.csv").rfind("iter,lr,lambda,loss_total,loss_tri,loss_mon\n0,", 0) == 0);

  auto eval = [&](const std::string& ckpt, const std::string& dir) {
    return cli({"eval", "--manifest", manifest, "--checkpoint", ckpt, "--report-dir", dir, "--order-check", "2"});
  };
  REQUIRE(eval(tmp / "m1.ckpt", tmp / "r1").code == 0);
  REQUIRE(eval(tmp / "m2.ckpt", tmp / "r2").code == 0);
  for (const char* f : {"eval.json", "eval.txt", "plans.csv"}) {
    CHECK(slurp(tmp / ("r1/" + std::string(f))) == slurp(tmp / ("r2/" + std::string(f))));
  }
  // Four cameras: 14 VSP plans per fuser, four fusers.
  const std::string csv = slurp(tmp / "r1/plans.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 14);
}

TEST_CASE("zero iterations store the initialisation") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  const Run r = cli({"train", "--manifest", tmp / "d/manifest.jsonl", "--checkpoint", tmp / "z.ckpt", "--iters", "0",
                     "--hidden", "5", "--seed", "11"});
  REQUIRE(r.code == 0);
  FusionConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden = 5;
  CHECK(load_checkpoint(tmp / "z.ckpt").model == init_params(11, cfg));
}

TEST_CASE("the mloss switch is recorded in the checkpoint") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  REQUIRE(cli({"train", "--manifest", tmp / "d/manifest.jsonl", "--checkpoint", tmp / "t.ckpt", "--iters", "3",
               "--hidden", "4", "--no-mloss", "--quiet"})
              .code == 0);
  CHECK(load_checkpoint(tmp / "t.ckpt").training["monotonicity_loss"] == false);
}

TEST_CASE("exit codes") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  const std::string manifest = tmp / "d/manifest.jsonl";
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({"train", "--manifest", manifest}).code == kExitUsage);
  CHECK(cli({"train", "--manifest", tmp / "missing.jsonl", "--checkpoint", tmp / "x.ckpt"}).code == kExitData);
  CHECK(cli({"train", "--manifest", manifest, "--checkpoint", tmp / "x.ckpt", "--hidden", "0"}).code == kExitUsage);
  CHECK(cli({"train", "--manifest", manifest, "--checkpoint", tmp / "x.ckpt", "--lr", "1e308", "--iters", "4",
             "--quiet"})
            .code == kExitDivergence);

  // Invalid combinations fail before any report is written.
  CHECK(cli({"eval", "--manifest", manifest, "--report-dir", tmp / "r", "--fuser", "gru"}).code == kExitUsage);
  CHECK(cli({"eval", "--manifest", manifest, "--report-dir", tmp / "r", "--gallery", "1"}).code == kExitUsage);
  CHECK(cli({"eval", "--manifest", manifest, "--report-dir", tmp / "r", "--protocol", "xyz"}).code == kExitUsage);
  CHECK_FALSE(fs::exists(tmp / "r"));

  // Dimension mismatch between checkpoint and manifest.
  REQUIRE(cli({"gen", "--out", tmp / "e", "--train-ids", "10", "--test-ids", "4", "--cameras", "3", "--dim", "3"})
              .code == 0);
  REQUIRE(cli({"train", "--manifest", tmp / "e/manifest.jsonl", "--checkpoint", tmp / "e.ckpt", "--iters", "0",
               "--hidden", "4"})
              .code == 0);
  const Run r = cli({"eval", "--manifest", manifest, "--checkpoint", tmp / "e.ckpt", "--report-dir", tmp / "r"});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("dimensional") != std::string::npos);
}

TEST_CASE("fsp evaluation and mean fusion of identical features") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  const Run r = cli({"eval", "--manifest", tmp / "d/manifest.jsonl", "--report-dir", tmp / "f", "--protocol", "fsp",
                     "--gallery", "1,2", "--fuser", "mean,single-query"});
  REQUIRE(r.code == 0);
  const auto doc = nlohmann::json::parse(slurp(tmp / "f/eval.json"));
  CHECK(doc["protocol"] == "fsp");
  CHECK(doc["fsp_galleries"] == nlohmann::json::array({nlohmann::json::array({1, 2})}));
  CHECK(doc["runs"].size() == 2);
  CHECK(doc["runs"][0]["plans"].size() == 3);
}

TEST_CASE("help lists full-scale values") {
  const Run r = cli({"train", "--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("full-scale 1e-4") != std::string::npos);
  CHECK(r.out.find("SEQFUSE_MANIFEST") != std::string::npos);
}

TEST_CASE("environment supplies paths") {
  TempDir tmp;
  REQUIRE(cli(small_gen(tmp / "d")).code == 0);
  const std::string manifest = tmp / "d/manifest.jsonl", ckpt = tmp / "env.ckpt";
  ::setenv("SEQFUSE_MANIFEST", manifest.c_str(), 1);
  ::setenv("SEQFUSE_CHECKPOINT", ckpt.c_str(), 1);
  const Run r = cli({"train", "--iters", "0", "--hidden", "3"});
  ::unsetenv("SEQFUSE_MANIFEST");
  ::unsetenv("SEQFUSE_CHECKPOINT");
  CHECK(r.code == 0);
  CHECK(fs::exists(ckpt));
}
