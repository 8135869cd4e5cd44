// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout:
//
//   line 1   JSON header terminated by '\n':
//            {"format":"seqfuse-checkpoint","version":1,
//             "dims":{"D":32,"E":64,"H":64},"seed":7,
//             "model":{"fc_activation":"none","gru_input":"pooled"},
//             "training":{...},
//             "blocks":[{"name":"fc_w","shape":[64,32]},...],
//             "blob_bytes":N}
//   rest     N bytes: every parameter block in kParamNames order, row-major,
//            as little-endian IEEE-754 float32.
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "seqfuse/fusion.hpp"

namespace seqfuse {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  FusionModel model;
  nlohmann::json training = nlohmann::json::object();
};

std::string encode_checkpoint(const FusionModel& model,
                              const nlohmann::json& training = nlohmann::json::object());
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const FusionModel& model, const std::filesystem::path& path,
                     const nlohmann::json& training = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqfuse
