// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "seqfuse/error.hpp"
#include "seqfuse/log.hpp"

namespace seqfuse {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Losses

double soft_margin(double d_pos, double d_neg) { return softplus(d_pos - d_neg); }

double hinge_margin(double d_pos, double d_neg, double margin) {
  return std::max(0.0, d_pos - d_neg + margin);
}

double monotonicity_hinge(double d_pos, double best_prior_pos, double d_neg, double worst_prior_neg) {
  return std::max(0.0, d_pos - best_prior_pos) + std::max(0.0, worst_prior_neg - d_neg);
}

Var soft_triplet(Graph& g, Var f, Var p, Var n) {
  return g.softplus(g.sub(g.euclidean(f, p), g.euclidean(f, n)));
}

Var hinge_triplet(Graph& g, Var f, Var p, Var n, double margin) {
  if (margin < 0.0) throw ArgumentError("triplet margin must be >= 0");
  return g.relu(g.add(g.sub(g.euclidean(f, p), g.euclidean(f, n)), g.constant(margin)));
}

namespace {

// Distances d(f_tau, p) and d(f_tau, n_tau) are shared between the triplet
// and monotonicity terms of one sequence.
struct SequenceDistances {
  std::vector<Var> pos;
  std::vector<Var> neg;
};

SequenceDistances sequence_distances(Graph& g, std::span<const Var> fused, Var p, std::span<const Var> negatives,
                                     std::size_t upto) {
  SequenceDistances d;
  for (std::size_t i = 0; i < upto; ++i) {
    d.pos.push_back(g.euclidean(fused[i], p));
    d.neg.push_back(g.euclidean(fused[i], negatives[i]));
  }
  return d;
}

Var monotonicity_from_distances(Graph& g, const SequenceDistances& d, std::size_t t) {
  if (t == 1) return g.constant(0.0);
  std::size_t best_pos = 0;
  std::size_t worst_neg = 0;
  for (std::size_t tau = 1; tau + 1 < t; ++tau) {
    if (g.value(d.pos[tau]).item() < g.value(d.pos[best_pos]).item()) best_pos = tau;
    if (g.value(d.neg[tau]).item() > g.value(d.neg[worst_neg]).item()) worst_neg = tau;
  }
  Var pos_term = g.relu(g.sub(d.pos[t - 1], d.pos[best_pos]));
  Var neg_term = g.relu(g.sub(d.neg[worst_neg], d.neg[t - 1]));
  return g.add(pos_term, neg_term);
}

}  // namespace

Var monotonicity_loss(Graph& g, std::span<const Var> fused, Var p, std::span<const Var> negatives, std::size_t t) {
  if (t < 1 || t > fused.size()) {
    throw ArgumentError("monotonicity_loss: index " + std::to_string(t) + " outside trace of length " +
                        std::to_string(fused.size()));
  }
  if (negatives.size() < t) throw ArgumentError("monotonicity_loss: missing negatives");
  if (t == 1) return g.constant(0.0);
  return monotonicity_from_distances(g, sequence_distances(g, fused, p, negatives, t), t);
}

double lambda_r(std::size_t t, std::size_t T) {
  if (T < 1 || t < 1 || t > T) {
    throw ArgumentError("lambda_r: need 1 <= t <= T, got t=" + std::to_string(t) + " T=" + std::to_string(T));
  }
  return static_cast<double>(t) / (static_cast<double>(T) * static_cast<double>(T + 1) / 2.0);
}

SequenceLoss total_loss(Graph& g, std::span<const Var> fused, Var p, std::span<const Var> negatives, double lambda,
                        const LossOptions& options) {
  const std::size_t T = fused.size();
  if (T == 0) throw ArgumentError("total_loss: empty trace");
  if (negatives.size() != T) throw ArgumentError("total_loss: need one negative per index");
  if (!options.soft_margin && options.margin < 0.0) throw ArgumentError("triplet margin must be >= 0");

  const SequenceDistances d = sequence_distances(g, fused, p, negatives, T);
  std::vector<Var> tri;
  std::vector<Var> mon;
  for (std::size_t t = 1; t <= T; ++t) {
    Var diff = g.sub(d.pos[t - 1], d.neg[t - 1]);
    tri.push_back(options.soft_margin ? g.softplus(diff) : g.relu(g.add(diff, g.constant(options.margin))));
    if (options.use_monotonicity) {
      mon.push_back(g.scale(monotonicity_from_distances(g, d, t), lambda_r(t, T)));
    }
  }
  const double inv_t = 1.0 / static_cast<double>(T);
  SequenceLoss out;
  out.triplet = g.scale(g.sum(tri), inv_t);
  out.monotonic = mon.empty() ? g.constant(0.0) : g.scale(g.sum(mon), inv_t);
  out.total = g.add(g.scale(out.triplet, lambda), out.monotonic);
  return out;
}

// ---------------------------------------------------------------------------
// Schedules

double scheduled_value(double t, const Schedule& s) {
  if (!(s.base > 0.0) || !(s.t0 < s.t1)) throw ArgumentError("schedule needs base > 0 and t0 < t1");
  if (t <= s.t0) return s.base;
  const double progress = std::min((t - s.t0) / (s.t1 - s.t0), 1.0);
  return s.base * std::pow(0.001, progress);
}

// ---------------------------------------------------------------------------
// Batches

std::vector<int> trainable_identities(const Dataset& dataset) {
  std::vector<int> out;
  std::size_t skipped = 0;
  for (int pid : dataset.identities(Split::train)) {
    if (dataset.cameras_of(Split::train, pid).size() >= 2) {
      out.push_back(pid);
    } else {
      ++skipped;
    }
  }
  if (skipped > 0) {
    log::warn(std::to_string(skipped) + " training identities seen in fewer than 2 cameras were skipped");
  }
  return out;
}

namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace

std::vector<BatchItem> build_batch(const Dataset& dataset, std::span<const int> eligible,
                                   const BatchOptions& options, std::mt19937_64& rng) {
  std::vector<int> pool(eligible.begin(), eligible.end());
  std::size_t want = options.identities;
  if (pool.size() < want) {
    log::warn("only " + std::to_string(pool.size()) + " eligible identities for a batch of " + std::to_string(want));
    want = pool.size();
  }
  // Partial Fisher-Yates: the first `want` entries become the sample.
  for (std::size_t i = 0; i < want; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  }

  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < want; ++i) {
    const int pid = pool[i];
    const auto cams = dataset.cameras_of(Split::train, pid);
    if (cams.size() < 2) {
      log::warn("identity " + std::to_string(pid) + " has fewer than 2 cameras; skipped");
      continue;
    }
    std::vector<std::size_t> chosen;
    for (int cam : cams) {
      const auto recs = dataset.records_of(Split::train, pid, cam);
      chosen.push_back(recs[uniform_index(rng, recs.size())]);
    }

    BatchItem item;
    item.pid = pid;
    bool positive_set = false;
    if (options.cross_sequence_positive) {
      std::vector<std::size_t> spare;
      for (int cam : cams) {
        for (std::size_t r : dataset.records_of(Split::train, pid, cam)) {
          if (std::find(chosen.begin(), chosen.end(), r) == chosen.end()) spare.push_back(r);
        }
      }
      if (!spare.empty()) {
        item.positive = spare[uniform_index(rng, spare.size())];
        item.sequence = chosen;
        positive_set = true;
      }
    }
    if (!positive_set) {
      const std::size_t omit = uniform_index(rng, chosen.size());
      item.positive = chosen[omit];
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        if (k != omit) item.sequence.push_back(chosen[k]);
      }
    }
    if (options.shuffle_order) std::shuffle(item.sequence.begin(), item.sequence.end(), rng);
    batch.push_back(std::move(item));
  }
  return batch;
}

std::size_t mine_negative(std::span<const double> anchor, std::span<const Vec> candidates,
                          std::span<const int> candidate_pids, int anchor_pid) {
  if (candidates.size() != candidate_pids.size()) throw ArgumentError("mine_negative: candidate/id count mismatch");
  std::optional<std::size_t> best;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidate_pids[i] == anchor_pid) continue;
    const double d = euclidean(anchor, candidates[i]);
    if (!best || d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  if (!best) throw ArgumentError("mine_negative: no candidate with a different identity in the batch");
  return *best;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(p->zeros_like());
      state.v.push_back(p->zeros_like());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i])) {
      throw DimensionError("adam_step: shape mismatch in block " + std::to_string(i));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

TrainConfig TrainConfig::full_scale() {
  TrainConfig cfg;
  cfg.model.hidden = 512;
  cfg.iterations = 25000;
  cfg.lr = {1e-4, 15000, 25000};
  cfg.lambda0 = 0.01;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lr.base > 0.0)) throw ArgumentError("initial learning rate must be > 0");
  if (!(lr.t0 < lr.t1)) throw ArgumentError("schedule needs t0 < t1");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
    throw ArgumentError("Adam betas must lie in (0, 1)");
  }
  if (!(lambda0 > 0.0)) throw ArgumentError("lambda0 must be > 0");
  if (batch.identities < 2) throw ArgumentError("a batch needs at least 2 identities");
  if (model.hidden == 0) throw ArgumentError("hidden size must be positive");
  if (!loss.soft_margin && loss.margin < 0.0) throw ArgumentError("triplet margin must be >= 0");
}

json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"iterations", iterations},
          {"hidden", model.hidden},
          {"fc_activation", to_string(model.fc_activation)},
          {"gru_input", to_string(model.gru_input)},
          {"batch_identities", batch.identities},
          {"cross_sequence_positive", batch.cross_sequence_positive},
          {"shuffle_order", batch.shuffle_order},
          {"lr", {{"eps0", lr.base}, {"t0", lr.t0}, {"t1", lr.t1}}},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"adam_epsilon", adam.epsilon},
          {"lambda0", lambda0},
          {"soft_margin", loss.soft_margin},
          {"margin", loss.margin},
          {"monotonicity_loss", loss.use_monotonicity}};
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::string format_loss_line(const LossRecord& r) {
  return std::to_string(r.iter) + "," + shortest(r.lr) + "," + shortest(r.lambda) + "," + shortest(r.total) + "," +
         shortest(r.triplet) + "," + shortest(r.monotonic);
}

BatchGraph build_batch_graph(const FusionModel& model, const Dataset& dataset, std::span<const BatchItem> batch,
                             double lambda, const LossOptions& options) {
  if (batch.empty()) throw ArgumentError("empty batch");
  BatchGraph bg;
  Graph& g = bg.graph;
  bg.vars = bind_model(g, model);

  // Mining pool: every record of the batch, ascending record index.
  std::vector<std::size_t> pool_records;
  for (const auto& item : batch) {
    pool_records.insert(pool_records.end(), item.sequence.begin(), item.sequence.end());
    pool_records.push_back(item.positive);
  }
  std::sort(pool_records.begin(), pool_records.end());
  pool_records.erase(std::unique(pool_records.begin(), pool_records.end()), pool_records.end());

  std::map<std::size_t, std::size_t> slot;
  std::vector<Var> inputs;
  std::vector<Var> pool_vars;
  std::vector<Vec> pool_values;
  std::vector<int> pool_pids;
  for (std::size_t r : pool_records) {
    const FeatureRecord& rec = dataset.record(r);
    slot[r] = inputs.size();
    inputs.push_back(g.input(Tensor::vector(rec.feature_f64())));
    pool_vars.push_back(single_step(g, bg.vars, inputs.back()));
    pool_values.push_back(g.value(pool_vars.back()).data());
    pool_pids.push_back(rec.pid);
  }

  std::vector<Var> totals, triplets, monos;
  for (const auto& item : batch) {
    if (item.sequence.empty()) throw ArgumentError("batch item with an empty sequence");
    std::vector<Var> xs;
    for (std::size_t r : item.sequence) xs.push_back(inputs[slot.at(r)]);
    const std::vector<Var> fused = fuse_sequence(g, bg.vars, xs);
    const Var p = pool_vars[slot.at(item.positive)];
    std::vector<Var> negatives;
    for (Var f : fused) {
      const std::size_t n = mine_negative(g.value(f).values(), pool_values, pool_pids, item.pid);
      negatives.push_back(pool_vars[n]);
    }
    const SequenceLoss l = total_loss(g, fused, p, negatives, lambda, options);
    totals.push_back(l.total);
    triplets.push_back(l.triplet);
    monos.push_back(l.monotonic);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  bg.loss.total = g.scale(g.sum(totals), inv_b);
  bg.loss.triplet = g.scale(g.sum(triplets), inv_b);
  bg.loss.monotonic = g.scale(g.sum(monos), inv_b);
  return bg;
}

LossRecord evaluate_batch_loss(const FusionModel& model, const Dataset& dataset, std::span<const BatchItem> batch,
                               double lambda, const LossOptions& options) {
  const BatchGraph bg = build_batch_graph(model, dataset, batch, lambda, options);
  LossRecord r;
  r.lambda = lambda;
  r.total = bg.graph.value(bg.loss.total).item();
  r.triplet = bg.graph.value(bg.loss.triplet).item();
  r.monotonic = bg.graph.value(bg.loss.monotonic).item();
  return r;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const std::vector<int> eligible = trainable_identities(dataset);
  if (eligible.size() < 2) throw ArgumentError("training needs at least 2 identities seen in >= 2 cameras");

  FusionConfig mcfg = cfg.model;
  mcfg.input_dim = dataset.dim();
  TrainResult result{init_params(cfg.seed, mcfg), {}};
  FusionModel& model = result.model;

  std::mt19937_64 rng(cfg.seed ^ 0x5eedba7c4e5ULL);
  AdamState adam;
  const Schedule lambda_sched{cfg.lambda0, cfg.lr.t0, cfg.lr.t1};
  auto params = model.parameters();

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    LossRecord rec;
    rec.iter = it;
    rec.lr = scheduled_value(static_cast<double>(it), cfg.lr);
    rec.lambda = scheduled_value(static_cast<double>(it), lambda_sched);
    const auto batch = build_batch(dataset, eligible, cfg.batch, rng);
    try {
      BatchGraph bg = build_batch_graph(model, dataset, batch, rec.lambda, cfg.loss);
      bg.graph.backward(bg.loss.total);
      rec.total = bg.graph.value(bg.loss.total).item();
      rec.triplet = bg.graph.value(bg.loss.triplet).item();
      rec.monotonic = bg.graph.value(bg.loss.monotonic).item();
      const std::vector<Tensor> grads = parameter_grads(bg.graph, bg.vars);
      for (const Tensor& gr : grads) {
        if (!gr.all_finite()) throw NumericError("non-finite gradient");
      }
      adam_step(params, grads, adam, rec.lr, cfg.adam);
      for (const Tensor* p : params) {
        if (!p->all_finite()) throw NumericError("non-finite parameter after update");
      }
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    result.history.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(it + 1, model);
    }
  }
  return result;
}

}  // namespace seqfuse
