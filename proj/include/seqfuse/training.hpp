// SPDX-License-Identifier: Apache-2.0
//
// Losses, batch construction with hard-negative mining, Adam, schedules and
// the training loop for the fusion model.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqfuse/dataset.hpp"
#include "seqfuse/diffcore.hpp"
#include "seqfuse/fusion.hpp"
#include "seqfuse/fusion_graph.hpp"

namespace seqfuse {

// ---------------------------------------------------------------------------
// Losses on scalar distances

/// ln(1 + exp(d_pos - d_neg)).
double soft_margin(double d_pos, double d_neg);
/// max(0, d_pos - d_neg + margin).
double hinge_margin(double d_pos, double d_neg, double margin);
/// Zero-margin hinges of the per-step improvement condition.
double monotonicity_hinge(double d_pos, double best_prior_pos, double d_neg, double worst_prior_neg);

// ---------------------------------------------------------------------------
// Losses on graph nodes

Var soft_triplet(Graph& g, Var f, Var p, Var n);
Var hinge_triplet(Graph& g, Var f, Var p, Var n, double margin);

/// Monotonicity loss at 1-based index t over fused features f_1..f_t with the
/// shared positive and the per-index negatives. Zero at t = 1. The prior
/// minimum / maximum distances select the corresponding graph node, so the
/// gradient flows through the arg-min / arg-max index.
Var monotonicity_loss(Graph& g, std::span<const Var> fused, Var p, std::span<const Var> negatives, std::size_t t);

/// lambda^R_t = t / (T (T + 1) / 2).
double lambda_r(std::size_t t, std::size_t T);

struct SequenceLoss {
  Var total;
  Var triplet;      // (1/T) sum_t L_tri
  Var monotonic;    // (1/T) sum_t lambda^R_t L_mon
};

struct LossOptions {
  bool soft_margin = true;
  double margin = 0.3;
  bool use_monotonicity = true;
};

/// (1/T) sum_t [ lambda * L_tri_t + lambda^R_t * L_mon_t ].
SequenceLoss total_loss(Graph& g, std::span<const Var> fused, Var p, std::span<const Var> negatives,
                        double lambda, const LossOptions& options = {});

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  double base = 1e-4;
  double t0 = 15000;
  double t1 = 25000;
};

/// base for t <= t0, base * 0.001^((t - t0) / (t1 - t0)) after, with the
/// exponent clamped at 1 past t1.
double scheduled_value(double t, const Schedule& s);

// ---------------------------------------------------------------------------
// Batches

struct BatchItem {
  int pid = 0;
  std::vector<std::size_t> sequence;  // record indices, fusion order
  std::size_t positive = 0;           // record index
};

struct BatchOptions {
  std::size_t identities = 8;
  /// Draw the positive from another record of the identity instead of
  /// removing one camera from the sequence, when such a record exists.
  bool cross_sequence_positive = false;
  /// Randomise camera order within each sequence instead of ascending ids.
  bool shuffle_order = false;
};

/// Identities eligible for training: at least two cameras in the train split.
std::vector<int> trainable_identities(const Dataset& dataset);

std::vector<BatchItem> build_batch(const Dataset& dataset, std::span<const int> eligible,
                                   const BatchOptions& options, std::mt19937_64& rng);

/// Index of the nearest candidate whose identity differs from anchor_pid;
/// ties resolve to the lowest index. Throws ArgumentError if none exists.
std::size_t mine_negative(std::span<const double> anchor, std::span<const Vec> candidates,
                          std::span<const int> candidate_pids, int anchor_pid);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr, const AdamConfig& cfg = {});

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  FusionConfig model;
  std::uint64_t seed = 7;
  std::size_t iterations = 5000;
  BatchOptions batch;
  Schedule lr{1e-3, 3000, 5000};
  AdamConfig adam;
  double lambda0 = 1.0;
  LossOptions loss;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  /// Full-scale hyperparameters (hidden 512, lr 1e-4, t0 15000, t1 25000,
  /// lambda0 0.01).
  static TrainConfig full_scale();
  void validate() const;
  nlohmann::json to_json() const;
};

struct LossRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  double triplet = 0.0;
  double monotonic = 0.0;
};

/// "iter, lr, lambda, loss_total, loss_tri, loss_mon" with shortest round-trip
/// decimals.
std::string format_loss_line(const LossRecord& r);

struct TrainResult {
  FusionModel model;
  std::vector<LossRecord> history;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_iteration;
  std::function<void(std::size_t iter, const FusionModel&)> on_checkpoint;
};

/// Loss of one batch under the given model, without updating it.
LossRecord evaluate_batch_loss(const FusionModel& model, const Dataset& dataset,
                               std::span<const BatchItem> batch, double lambda, const LossOptions& options);

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Builds the whole batch graph and returns the mean loss; used by the
/// training loop and by gradient checks.
struct BatchGraph {
  Graph graph;
  ModelVars vars;
  SequenceLoss loss;
};
BatchGraph build_batch_graph(const FusionModel& model, const Dataset& dataset, std::span<const BatchItem> batch,
                             double lambda, const LossOptions& options);

}  // namespace seqfuse
