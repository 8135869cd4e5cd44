// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seqfuse/error.hpp"

namespace seqfuse {

using json = nlohmann::json;

std::string encode_checkpoint(const FusionModel& model, const json& training) {
  model.validate();
  json header;
  header["format"] = "seqfuse-checkpoint";
  header["version"] = kCheckpointVersion;
  header["dims"] = {{"D", model.config.input_dim}, {"E", model.config.hidden}, {"H", model.config.hidden}};
  header["seed"] = model.seed;
  header["model"] = {{"fc_activation", to_string(model.config.fc_activation)},
                     {"gru_input", to_string(model.config.gru_input)}};
  header["training"] = training;
  json blocks = json::array();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < kParamBlocks; ++i) {
    const Tensor& t = *params[i];
    json shape = t.rank() == 2 ? json::array({t.rows(), t.cols()}) : json::array({t.rows()});
    blocks.push_back({{"name", kParamNames[i]}, {"shape", shape}});
  }
  header["blocks"] = blocks;
  header["blob_bytes"] = 4 * model.parameter_count();

  std::string out = header.dump() + "\n";
  out.reserve(out.size() + 4 * model.parameter_count());
  for (const Tensor* t : params) {
    for (double v : t->values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint: corrupted header: ") + e.what());
  }

  Checkpoint ck;
  try {
    if (header.at("format") != "seqfuse-checkpoint") throw DataError("checkpoint: unknown format tag");
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    FusionConfig cfg;
    cfg.input_dim = header.at("dims").at("D").get<std::size_t>();
    cfg.hidden = header.at("dims").at("H").get<std::size_t>();
    if (header.at("dims").at("E").get<std::size_t>() != cfg.hidden) {
      throw DataError("checkpoint: embedding size E must equal hidden size H");
    }
    cfg.fc_activation = parse_fc_activation(header.at("model").at("fc_activation").get<std::string>());
    cfg.gru_input = parse_gru_input(header.at("model").at("gru_input").get<std::string>());
    ck.model = zero_model(cfg);
    ck.model.seed = header.at("seed").get<std::uint64_t>();
    ck.training = header.value("training", json::object());

    const auto& blocks = header.at("blocks");
    auto params = ck.model.parameters();
    if (blocks.size() != kParamBlocks) throw DataError("checkpoint: expected 11 parameter blocks");
    for (std::size_t i = 0; i < kParamBlocks; ++i) {
      if (blocks[i].at("name") != kParamNames[i]) {
        throw DataError("checkpoint: block " + std::to_string(i) + " should be " + std::string(kParamNames[i]));
      }
      const auto& shape = blocks[i].at("shape");
      const Tensor& t = *params[i];
      const bool ok = t.rank() == 2 ? shape == json::array({t.rows(), t.cols()}) : shape == json::array({t.rows()});
      if (!ok) throw DataError("checkpoint: block " + std::string(kParamNames[i]) + " shape disagrees with dims");
    }
    const std::size_t expected = 4 * ck.model.parameter_count();
    if (header.at("blob_bytes").get<std::size_t>() != expected) {
      throw DataError("checkpoint: blob_bytes disagrees with dims (expected " + std::to_string(expected) + ")");
    }
    const std::size_t actual = bytes.size() - nl - 1;
    if (actual != expected) {
      throw DataError("checkpoint: parameter blob is " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: corrupted header: ") + e.what());
  }

  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + nl + 1;
  for (Tensor* t : ck.model.parameters()) {
    for (double& v : t->values()) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
      p += 4;
      float f;
      std::memcpy(&f, &bits, 4);
      v = f;
    }
  }
  const auto loaded = ck.model.parameters();
  if (!std::all_of(loaded.begin(), loaded.end(), [](const Tensor* t) { return t->all_finite(); })) {
    throw DataError("checkpoint: non-finite parameter values");
  }
  return ck;
}

void save_checkpoint(const FusionModel& model, const std::filesystem::path& path, const json& training) {
  const std::string bytes = encode_checkpoint(model, training);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace seqfuse
