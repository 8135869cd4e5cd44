// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "seqfuse/checkpoint.hpp"
#include "seqfuse/dataset.hpp"
#include "seqfuse/error.hpp"
#include "seqfuse/synthetic.hpp"

using namespace seqfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("seqfuse-test-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("manifest parsing") {
  const std::string text =
      "{\"manifest\":\"seqfuse\",\"version\":1,\"cameras\":3,\"dim\":2}\n"
      "{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\",\"feat\":[0.5,-1.25]}\n"
      "\n"
      "{\"id\":\"b\",\"pid\":1,\"cam\":3,\"split\":\"query\",\"feat\":[1,2],\"img\":\"b.png\"}\n";
  const Dataset d = parse_manifest(text);
  REQUIRE(d.size() == 2);
  CHECK(d.dim() == 2);
  CHECK(d.camera_count() == 3);
  CHECK(d.record(0).feature == std::vector<float>{0.5f, -1.25f});
  CHECK(d.record(1).image == std::optional<std::string>("b.png"));
  CHECK(d.find("b") == std::optional<std::size_t>(1));
  CHECK_FALSE(d.find("zzz").has_value());
  CHECK(d.identities(Split::query) == std::vector<int>{1});
  CHECK(d.cameras_of(Split::train, 1) == std::vector<int>{1});
}

TEST_CASE("manifest errors name the line") {
  auto msg = error_of([] { parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\",\"feat\":[1]}\nnot json\n"); });
  CHECK(msg.find("manifest line 2") != std::string::npos);

  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"tra\",\"feat\":[1]}\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":0,\"split\":\"train\",\"feat\":[1]}\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\"}\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\",\"feat\":[\"x\"]}\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("{\"manifest\":\"seqfuse\",\"version\":2}\n"), DataError);
  // Duplicate ids and mixed dimensions.
  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\",\"feat\":[1]}\n"
                                 "{\"id\":\"a\",\"pid\":2,\"cam\":1,\"split\":\"train\",\"feat\":[1]}\n"),
                  DataError);
  CHECK_THROWS_AS(parse_manifest("{\"id\":\"a\",\"pid\":1,\"cam\":1,\"split\":\"train\",\"feat\":[1]}\n"
                                 "{\"id\":\"b\",\"pid\":2,\"cam\":1,\"split\":\"train\",\"feat\":[1,2]}\n"),
                  DataError);
  // Camera beyond the declared count.
  CHECK_THROWS_AS(parse_manifest("{\"manifest\":\"seqfuse\",\"version\":1,\"cameras\":2,\"dim\":1}\n"
                                 "{\"id\":\"a\",\"pid\":1,\"cam\":3,\"split\":\"train\",\"feat\":[1]}\n"),
                  DataError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/seqfuse/manifest.jsonl"), DataError);
}

TEST_CASE("format_float round trips every sampled float") {
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::uint32_t> bits;
  int checked = 0;
  while (checked < 20000) {
    const float v = std::bit_cast<float>(bits(rng));
    if (!std::isfinite(v)) continue;
    const std::string s = format_float(v);
    CHECK(std::strtof(s.c_str(), nullptr) == v);
    ++checked;
  }
  CHECK(format_float(0.5f) == "0.5");
  CHECK(format_float(-1.25f) == "-1.25");
}

TEST_CASE("manifest save and load are lossless") {
  SyntheticSpec spec;
  spec.train_identities = 6;
  spec.test_identities = 4;
  spec.cameras = 3;
  spec.dim = 5;
  const Dataset d = generate_synthetic(spec).dataset;
  TempDir tmp;

  save_manifest(d, tmp.path / "inline.jsonl");
  const Dataset a = load_manifest(tmp.path / "inline.jsonl");
  CHECK(a.records() == d.records());
  CHECK(a.declared_cameras() == d.declared_cameras());

  ManifestOptions opts;
  opts.blob = tmp.path / "features.f32";
  save_manifest(d, tmp.path / "blob.jsonl", opts);
  const Dataset b = load_manifest(tmp.path / "blob.jsonl");
  CHECK(b.records() == d.records());
  CHECK(fs::file_size(tmp.path / "features.f32") == d.size() * d.dim() * 4);

  // Writing is deterministic.
  save_manifest(d, tmp.path / "again.jsonl");
  CHECK(read_file(tmp.path / "inline.jsonl") == read_file(tmp.path / "again.jsonl"));
  CHECK(format_manifest(d) == read_file(tmp.path / "inline.jsonl"));
}

TEST_CASE("checkpoint round trip") {
  FusionConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden = 5;
  cfg.fc_activation = FcActivation::relu;
  const FusionModel m = init_params(42, cfg);
  const nlohmann::json training = {{"iterations", 10}};
  const std::string bytes = encode_checkpoint(m, training);
  const Checkpoint c = decode_checkpoint(bytes);
  CHECK(c.model == m);
  CHECK(c.training == training);
  CHECK(encode_checkpoint(c.model, c.training) == bytes);

  TempDir tmp;
  save_checkpoint(m, tmp.path / "m.ckpt", training);
  CHECK(load_checkpoint(tmp.path / "m.ckpt").model == m);
  CHECK(read_file(tmp.path / "m.ckpt") == bytes);
}

TEST_CASE("checkpoint corruption is detected") {
  FusionConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 2;
  const std::string bytes = encode_checkpoint(init_params(1, cfg));
  const std::size_t nl = bytes.find('\n');

  // Truncated blob.
  auto msg = error_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 4)); });
  CHECK(msg.find("bytes, expected") != std::string::npos);

  // Version bump.
  std::string v2 = bytes;
  v2.replace(v2.find("\"version\":1"), 11, "\"version\":9");
  msg = error_of([&] { decode_checkpoint(v2); });
  CHECK(msg.find("version 9") != std::string::npos);

  // Garbled header.
  std::string garbled = bytes;
  garbled[nl / 2] = '#';
  CHECK_THROWS_AS(decode_checkpoint(garbled), DataError);
  CHECK_THROWS_AS(decode_checkpoint("no newline at all"), DataError);

  // NaN payload.
  std::string nan = bytes;
  const float q = std::nanf("");
  std::memcpy(nan.data() + nl + 1, &q, 4);
  CHECK_THROWS_AS(decode_checkpoint(nan), DataError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), DataError);
}

TEST_CASE("synthetic generation is deterministic and well-formed") {
  SyntheticSpec spec;
  spec.train_identities = 20;
  spec.test_identities = 10;
  spec.distractors = 5;
  spec.cameras = 5;
  spec.dim = 8;
  const SyntheticDataset a = generate_synthetic(spec);
  const SyntheticDataset b = generate_synthetic(spec);
  CHECK(a.dataset.records() == b.dataset.records());
  CHECK(format_manifest(a.dataset) == format_manifest(b.dataset));
  spec.seed = 2;
  CHECK_FALSE(generate_synthetic(spec).dataset.records() == a.dataset.records());

  const Dataset& d = a.dataset;
  CHECK(d.dim() == 8);
  CHECK(d.identities(Split::train).size() == 20);
  CHECK(d.identities(Split::query).size() == 10);
  CHECK(d.identities(Split::gallery).size() == 15);
  for (int pid : d.identities(Split::train)) CHECK(d.cameras_of(Split::train, pid).size() >= 2);
  for (int pid : d.identities(Split::query)) {
    // Test identities: one query record per camera, gallery records in the same cameras.
    CHECK(d.cameras_of(Split::query, pid) == d.cameras_of(Split::gallery, pid));
    for (int cam : d.cameras_of(Split::query, pid)) CHECK(d.records_of(Split::query, pid, cam).size() == 1);
  }

  // Camera transforms are orthogonal.
  for (const Tensor& t : a.transforms) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      for (std::size_t j = 0; j < t.rows(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < t.cols(); ++k) dot += t.at(i, k) * t.at(j, k);
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
      }
    }
  }
}

TEST_CASE("synthetic spec validation and JSON") {
  SyntheticSpec spec;
  spec.validate();
  const SyntheticSpec back = synthetic_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));

  SyntheticSpec bad = spec;
  bad.visibility = {{7, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = spec;
  bad.visibility = {{0, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = spec;
  bad.visibility = {{2, 0.0}};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = spec;
  bad.noise = -1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = spec;
  bad.cameras = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = spec;
  bad.visibility = {{1, 1.0}};
  CHECK_NOTHROW(bad.validate());
  CHECK_THROWS_AS(synthetic_spec_from_json(nlohmann::json{{"cameras", "six"}}), ArgumentError);

  const auto vis = default_visibility(4);
  CHECK(vis.rbegin()->first == 4);
  CHECK(vis.begin()->first == 2);
}

TEST_CASE("noiseless single-camera world reproduces the latents") {
  SyntheticSpec spec;
  spec.train_identities = 3;
  spec.test_identities = 2;
  spec.cameras = 1;
  spec.dim = 4;
  spec.noise = 0.0;
  spec.transform_scale = 0.0;
  spec.camera_bias_scale = 0.0;
  const SyntheticDataset s = generate_synthetic(spec);
  REQUIRE(s.latents.size() == 5);
  for (const FeatureRecord& r : s.dataset.records()) {
    CHECK(r.cam == 1);
    const Vec& mu = s.latents[static_cast<std::size_t>(r.pid - 1)];
    for (std::size_t i = 0; i < mu.size(); ++i) CHECK(r.feature[i] == static_cast<float>(mu[i]));
  }
}
