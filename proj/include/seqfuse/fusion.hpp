// SPDX-License-Identifier: Apache-2.0
//
// Sequential fusion function: FC embedding -> running mean pool -> GRU.
//
// Two evaluation paths share one parameter set. The plain path in this header
// is used for inference and evaluation; fusion_graph.hpp builds the same
// computation on a Graph for training. Tests hold the two paths equal.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqfuse/diffcore.hpp"

namespace seqfuse {

using Vec = std::vector<double>;

enum class FcActivation { none, relu };
/// pooled: GRU input at index t is the mean of FC outputs 1..t.
/// raw:    GRU input at index t is the FC output of x_t alone.
enum class GruInput { pooled, raw };
enum class PoolKind { mean, max };

std::string_view to_string(FcActivation a);
std::string_view to_string(GruInput g);
FcActivation parse_fc_activation(std::string_view s);
GruInput parse_gru_input(std::string_view s);

struct GruParams {
  Tensor w_rx, w_rh, b_r;
  Tensor w_zx, w_zh, b_z;
  Tensor w_hx, w_hh, b_h;

  std::size_t hidden() const { return b_r.size(); }
  std::size_t input_dim() const { return w_rx.cols(); }
  /// Throws DimensionError unless all nine blocks agree on H and D_in.
  void validate() const;

  bool operator==(const GruParams&) const = default;
};

struct FusionConfig {
  std::size_t input_dim = 32;  // D
  std::size_t hidden = 64;     // E = H
  FcActivation fc_activation = FcActivation::none;
  GruInput gru_input = GruInput::pooled;

  bool operator==(const FusionConfig&) const = default;
};

inline constexpr std::size_t kParamBlocks = 11;

/// Canonical parameter order; shared by the optimizer and the checkpoint blob.
inline constexpr std::array<std::string_view, kParamBlocks> kParamNames = {
    "fc_w", "fc_b", "w_rx", "w_rh", "b_r", "w_zx", "w_zh", "b_z", "w_hx", "w_hh", "b_h"};

struct FusionModel {
  FusionConfig config;
  std::uint64_t seed = 0;
  Tensor fc_w;  // E x D
  Tensor fc_b;  // E
  GruParams gru;

  std::array<Tensor*, kParamBlocks> parameters();
  std::array<const Tensor*, kParamBlocks> parameters() const;
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const FusionModel&) const = default;
};

/// All-zero model of the given shape.
FusionModel zero_model(const FusionConfig& config);

/// Xavier-uniform weights, zero biases. Sampled values are rounded to float so
/// a freshly initialised model survives a checkpoint round trip bitwise.
FusionModel init_params(std::uint64_t seed, const FusionConfig& config);

struct GruGates {
  Vec r, z, s, h;
};

/// Per-index fused features f_t (= h_t) and the GRU inputs that produced them.
struct FusedTrace {
  std::vector<Vec> fused;
  std::vector<Vec> gru_inputs;

  std::size_t length() const { return fused.size(); }
  const Vec& final_hidden() const { return fused.back(); }
};

Vec fc_embed(const FusionModel& model, std::span<const double> x);
GruGates gru_gates(const GruParams& params, std::span<const double> input,
                   std::span<const double> h_prev);
Vec gru_step(const GruParams& params, std::span<const double> input,
             std::span<const double> h_prev);
FusedTrace fuse_sequence(const FusionModel& model, std::span<const Vec> sequence);
/// fuse_sequence over k copies of the same feature; returns f_k.
Vec fuse_repeated(const FusionModel& model, std::span<const double> feature, std::size_t k);
Vec single_step(const FusionModel& model, std::span<const double> x);
Vec pool_fuse(PoolKind kind, std::span<const Vec> features);

double euclidean(std::span<const double> a, std::span<const double> b);

}  // namespace seqfuse
