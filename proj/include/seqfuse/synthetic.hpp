// SPDX-License-Identifier: Apache-2.0
//
// Deterministic multi-camera feature generator standing in for CNN features.
//
// Identity i has a latent mu_i ~ N(0, latent_scale^2 I). Camera c applies an
// orthogonal transform A_c (Gram-Schmidt of I + transform_scale * G) and a
// bias b_c ~ N(0, camera_bias_scale^2 I). Every observation is
// A_c mu_i + b_c + N(0, noise^2 I), stored as float32.
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqfuse/dataset.hpp"

namespace seqfuse {

struct SyntheticSpec {
  int train_identities = 200;
  int test_identities = 100;
  int distractors = 0;  // gallery-only identities, one camera each
  int cameras = 6;
  int dim = 32;
  double latent_scale = 1.0;
  double transform_scale = 0.05;
  double camera_bias_scale = 1.0;
  double noise = 0.7;
  /// Weight per number of cameras an identity is visible in. Empty selects
  /// the default shape (see default_visibility).
  std::map<int, double> visibility;
  int train_records_per_camera = 2;  // max; drawn uniformly from 1..max
  int gallery_records_per_camera = 3;  // max; drawn uniformly from 1..max
  std::uint64_t seed = 1;

  /// Throws ArgumentError on an invalid or infeasible spec.
  void validate() const;
  std::map<int, double> effective_visibility() const;
};

/// Default histogram over 2..min(6, cameras) cameras per identity; a single
/// camera setup puts all mass on 1.
std::map<int, double> default_visibility(int cameras);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticDataset {
  Dataset dataset;
  std::vector<Vec> latents;      // indexed by pid - 1
  std::vector<Tensor> transforms;  // indexed by cam - 1
  std::vector<Vec> biases;       // indexed by cam - 1
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace seqfuse
