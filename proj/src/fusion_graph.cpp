// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/fusion_graph.hpp"

#include "seqfuse/error.hpp"

namespace seqfuse {

ModelVars bind_model(Graph& g, const FusionModel& model) {
  model.validate();
  ModelVars vars;
  vars.config = model.config;
  const auto params = model.parameters();
  for (std::size_t i = 0; i < kParamBlocks; ++i) vars.params[i] = g.input(*params[i]);
  return vars;
}

std::vector<Tensor> parameter_grads(const Graph& g, const ModelVars& vars) {
  std::vector<Tensor> grads;
  grads.reserve(kParamBlocks);
  for (Var v : vars.params) grads.push_back(g.grad(v));
  return grads;
}

Var fc_embed(Graph& g, const ModelVars& m, Var x) {
  Var y = g.add(g.matvec(m.fc_w(), x), m.fc_b());
  if (m.config.fc_activation == FcActivation::relu) y = g.relu(y);
  return y;
}

Var gru_step(Graph& g, const ModelVars& m, Var input, Var h_prev) {
  // Summation order mirrors the plain path: bias, then input term, then
  // recurrent term.
  Var r = g.sigmoid(g.add(g.add(m.b_r(), g.matvec(m.w_rx(), input)), g.matvec(m.w_rh(), h_prev)));
  Var z = g.sigmoid(g.add(g.add(m.b_z(), g.matvec(m.w_zx(), input)), g.matvec(m.w_zh(), h_prev)));
  Var gated = g.mul(h_prev, r);
  Var s = g.tanh(g.add(g.add(m.b_h(), g.matvec(m.w_hx(), input)), g.matvec(m.w_hh(), gated)));
  return g.add(h_prev, g.mul(z, g.sub(s, h_prev)));
}

std::vector<Var> fuse_sequence(Graph& g, const ModelVars& m, std::span<const Var> sequence) {
  if (sequence.empty()) throw ArgumentError("fuse_sequence: empty sequence");
  std::vector<Var> embedded;
  std::vector<Var> fused;
  embedded.reserve(sequence.size());
  fused.reserve(sequence.size());
  Var state = g.input(Tensor::vector(m.config.hidden));
  for (Var x : sequence) {
    embedded.push_back(fc_embed(g, m, x));
    Var input = m.config.gru_input == GruInput::pooled ? g.mean_pool(embedded) : embedded.back();
    state = gru_step(g, m, input, state);
    fused.push_back(state);
  }
  return fused;
}

Var single_step(Graph& g, const ModelVars& m, Var x) {
  const Var seq[1] = {x};
  return fuse_sequence(g, m, seq).front();
}

}  // namespace seqfuse
