// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "seqfuse/error.hpp"

namespace seqfuse {

std::string_view to_string(FcActivation a) { return a == FcActivation::relu ? "relu" : "none"; }
std::string_view to_string(GruInput g) { return g == GruInput::raw ? "raw" : "pooled"; }

FcActivation parse_fc_activation(std::string_view s) {
  if (s == "none") return FcActivation::none;
  if (s == "relu") return FcActivation::relu;
  throw ArgumentError("unknown fc activation '" + std::string(s) + "'");
}

GruInput parse_gru_input(std::string_view s) {
  if (s == "pooled") return GruInput::pooled;
  if (s == "raw") return GruInput::raw;
  throw ArgumentError("unknown gru input mode '" + std::string(s) + "'");
}

namespace {

void expect_shape(const Tensor& t, int rank, std::size_t rows, std::size_t cols, std::string_view name) {
  if (t.rank() != rank || t.rows() != rows || t.cols() != cols) {
    throw DimensionError("parameter " + std::string(name) + " has shape " + std::to_string(t.rows()) +
                         "x" + std::to_string(t.cols()) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

void matvec_acc(const Tensor& w, std::span<const double> x, Vec& out) {
  const std::size_t cols = w.cols();
  const double* wp = w.data().data();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double* row = wp + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

void require_dim(std::span<const double> x, std::size_t n, const char* what) {
  if (x.size() != n) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(n) + ", got " +
                         std::to_string(x.size()));
  }
}

}  // namespace

void GruParams::validate() const {
  const std::size_t h = hidden();
  const std::size_t d = input_dim();
  if (h == 0 || d == 0) throw DimensionError("GRU parameters are empty");
  expect_shape(w_rx, 2, h, d, "w_rx");
  expect_shape(w_zx, 2, h, d, "w_zx");
  expect_shape(w_hx, 2, h, d, "w_hx");
  expect_shape(w_rh, 2, h, h, "w_rh");
  expect_shape(w_zh, 2, h, h, "w_zh");
  expect_shape(w_hh, 2, h, h, "w_hh");
  expect_shape(b_r, 1, h, 1, "b_r");
  expect_shape(b_z, 1, h, 1, "b_z");
  expect_shape(b_h, 1, h, 1, "b_h");
}

std::array<Tensor*, kParamBlocks> FusionModel::parameters() {
  return {&fc_w, &fc_b, &gru.w_rx, &gru.w_rh, &gru.b_r, &gru.w_zx,
          &gru.w_zh, &gru.b_z, &gru.w_hx, &gru.w_hh, &gru.b_h};
}

std::array<const Tensor*, kParamBlocks> FusionModel::parameters() const {
  return {&fc_w, &fc_b, &gru.w_rx, &gru.w_rh, &gru.b_r, &gru.w_zx,
          &gru.w_zh, &gru.b_z, &gru.w_hx, &gru.w_hh, &gru.b_h};
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

void FusionModel::validate() const {
  const std::size_t e = config.hidden;
  const std::size_t d = config.input_dim;
  if (e == 0 || d == 0) throw DimensionError("model dimensions must be positive");
  expect_shape(fc_w, 2, e, d, "fc_w");
  expect_shape(fc_b, 1, e, 1, "fc_b");
  gru.validate();
  if (gru.hidden() != e || gru.input_dim() != e) {
    throw DimensionError("GRU hidden/input size must equal the embedding size " + std::to_string(e));
  }
}

FusionModel zero_model(const FusionConfig& config) {
  if (config.hidden == 0 || config.input_dim == 0) throw ArgumentError("model dimensions must be positive");
  const std::size_t h = config.hidden;
  FusionModel m;
  m.config = config;
  m.fc_w = Tensor::matrix(h, config.input_dim);
  m.fc_b = Tensor::vector(h);
  for (Tensor* w : {&m.gru.w_rx, &m.gru.w_zx, &m.gru.w_hx, &m.gru.w_rh, &m.gru.w_zh, &m.gru.w_hh}) {
    *w = Tensor::matrix(h, h);
  }
  for (Tensor* b : {&m.gru.b_r, &m.gru.b_z, &m.gru.b_h}) *b = Tensor::vector(h);
  return m;
}

FusionModel init_params(std::uint64_t seed, const FusionConfig& config) {
  FusionModel m = zero_model(config);
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (Tensor* t : m.parameters()) {
    if (t->rank() != 2) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(t->rows() + t->cols()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& v : t->values()) {
      do {
        v = static_cast<double>(static_cast<float>(dist(rng)));
      } while (!(std::abs(v) < a));
    }
  }
  return m;
}

Vec fc_embed(const FusionModel& model, std::span<const double> x) {
  require_dim(x, model.config.input_dim, "fc_embed");
  Vec out(model.fc_b.data());
  matvec_acc(model.fc_w, x, out);
  if (model.config.fc_activation == FcActivation::relu) {
    for (double& v : out) v = std::max(v, 0.0);
  }
  return out;
}

GruGates gru_gates(const GruParams& p, std::span<const double> input, std::span<const double> h_prev) {
  const std::size_t h = p.hidden();
  require_dim(input, p.input_dim(), "gru_step input");
  require_dim(h_prev, h, "gru_step hidden state");

  GruGates g;
  g.r = p.b_r.data();
  matvec_acc(p.w_rx, input, g.r);
  matvec_acc(p.w_rh, h_prev, g.r);
  for (double& v : g.r) v = sigmoid(v);

  g.z = p.b_z.data();
  matvec_acc(p.w_zx, input, g.z);
  matvec_acc(p.w_zh, h_prev, g.z);
  for (double& v : g.z) v = sigmoid(v);

  Vec gated(h);
  for (std::size_t i = 0; i < h; ++i) gated[i] = h_prev[i] * g.r[i];
  g.s = p.b_h.data();
  matvec_acc(p.w_hx, input, g.s);
  matvec_acc(p.w_hh, gated, g.s);
  for (double& v : g.s) v = std::tanh(v);

  // h = (1 - z) * h_prev + z * s, written as h_prev + z * (s - h_prev) to
  // match the graph path operation for operation.
  g.h.resize(h);
  for (std::size_t i = 0; i < h; ++i) g.h[i] = h_prev[i] + g.z[i] * (g.s[i] - h_prev[i]);
  return g;
}

Vec gru_step(const GruParams& params, std::span<const double> input, std::span<const double> h_prev) {
  return gru_gates(params, input, h_prev).h;
}

FusedTrace fuse_sequence(const FusionModel& model, std::span<const Vec> sequence) {
  if (sequence.empty()) throw ArgumentError("fuse_sequence: empty sequence");
  const std::size_t h = model.config.hidden;
  FusedTrace trace;
  trace.fused.reserve(sequence.size());
  trace.gru_inputs.reserve(sequence.size());

  Vec running(h, 0.0);
  Vec state(h, 0.0);
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    Vec embedded = fc_embed(model, sequence[t]);
    Vec input;
    if (model.config.gru_input == GruInput::pooled) {
      for (std::size_t i = 0; i < h; ++i) running[i] += embedded[i];
      input.resize(h);
      const double inv = 1.0 / static_cast<double>(t + 1);
      for (std::size_t i = 0; i < h; ++i) input[i] = running[i] * inv;
    } else {
      input = std::move(embedded);
    }
    state = gru_step(model.gru, input, state);
    trace.gru_inputs.push_back(std::move(input));
    trace.fused.push_back(state);
  }
  return trace;
}

Vec fuse_repeated(const FusionModel& model, std::span<const double> feature, std::size_t k) {
  if (k == 0) throw ArgumentError("fuse_repeated: k must be >= 1");
  // The running mean of k identical embeddings is the embedding itself, up to
  // summation rounding; run the real sequence so results are bit-identical to
  // fuse_sequence on [g] * k.
  std::vector<Vec> seq(k, Vec(feature.begin(), feature.end()));
  return fuse_sequence(model, seq).final_hidden();
}

Vec single_step(const FusionModel& model, std::span<const double> x) {
  const Vec seq[1] = {Vec(x.begin(), x.end())};
  return fuse_sequence(model, seq).final_hidden();
}

Vec pool_fuse(PoolKind kind, std::span<const Vec> features) {
  if (features.empty()) throw ArgumentError("pool_fuse: empty list");
  const std::size_t d = features[0].size();
  for (const Vec& f : features) {
    if (f.size() != d) throw DimensionError("pool_fuse: feature dimensions differ");
  }
  Vec out(d);
  // Each coordinate is reduced over its sorted values, so the result does not
  // depend on the order of the input list, bit for bit.
  Vec column(features.size());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < features.size(); ++k) column[k] = features[k][i];
    std::sort(column.begin(), column.end());
    if (kind == PoolKind::max || column.front() == column.back()) {
      out[i] = column.back();
    } else {
      double acc = 0.0;
      for (double v : column) acc += v;
      out[i] = acc / static_cast<double>(features.size());
    }
  }
  return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("euclidean: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace seqfuse
