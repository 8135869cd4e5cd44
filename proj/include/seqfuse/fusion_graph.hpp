// SPDX-License-Identifier: Apache-2.0
//
// The fusion function expressed on a differentiation Graph, for training.
#pragma once

#include <array>
#include <span>
#include <vector>

#include "seqfuse/diffcore.hpp"
#include "seqfuse/fusion.hpp"

namespace seqfuse {

/// Graph leaves holding one copy of every model parameter, in kParamNames order.
struct ModelVars {
  FusionConfig config;
  std::array<Var, kParamBlocks> params{};

  Var fc_w() const { return params[0]; }
  Var fc_b() const { return params[1]; }
  Var w_rx() const { return params[2]; }
  Var w_rh() const { return params[3]; }
  Var b_r() const { return params[4]; }
  Var w_zx() const { return params[5]; }
  Var w_zh() const { return params[6]; }
  Var b_z() const { return params[7]; }
  Var w_hx() const { return params[8]; }
  Var w_hh() const { return params[9]; }
  Var b_h() const { return params[10]; }
};

ModelVars bind_model(Graph& g, const FusionModel& model);

/// Gradients of every parameter leaf, in kParamNames order.
std::vector<Tensor> parameter_grads(const Graph& g, const ModelVars& vars);

Var fc_embed(Graph& g, const ModelVars& m, Var x);
Var gru_step(Graph& g, const ModelVars& m, Var input, Var h_prev);
/// Returns f_1..f_k as graph nodes. h_0 is a zero leaf.
std::vector<Var> fuse_sequence(Graph& g, const ModelVars& m, std::span<const Var> sequence);
Var single_step(Graph& g, const ModelVars& m, Var x);

}  // namespace seqfuse
