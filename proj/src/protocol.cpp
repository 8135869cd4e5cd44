// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "seqfuse/error.hpp"
#include "seqfuse/log.hpp"

namespace seqfuse {

using json = nlohmann::json;

std::string_view to_string(Protocol p) { return p == Protocol::fsp ? "fsp" : "vsp"; }

std::string_view to_string(Fuser f) {
  switch (f) {
    case Fuser::gru: return "gru";
    case Fuser::mean: return "mean";
    case Fuser::max: return "max";
    case Fuser::single_query: return "single-query";
  }
  return "gru";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "vsp") return Protocol::vsp;
  if (s == "fsp") return Protocol::fsp;
  throw ArgumentError("unknown protocol '" + std::string(s) + "' (expected vsp or fsp)");
}

Fuser parse_fuser(std::string_view s) {
  if (s == "gru") return Fuser::gru;
  if (s == "mean") return Fuser::mean;
  if (s == "max") return Fuser::max;
  if (s == "single-query" || s == "single") return Fuser::single_query;
  throw ArgumentError("unknown fuser '" + std::string(s) + "' (expected gru, mean, max or single-query)");
}

// ---------------------------------------------------------------------------
// Plans

std::vector<std::uint32_t> vsp_gallery_masks(int n) {
  if (n < 2) throw ArgumentError("VSP needs at least 2 cameras, got " + std::to_string(n));
  if (n > 30) throw ArgumentError("too many cameras for subset enumeration");
  std::vector<std::uint32_t> out;
  const std::uint32_t full = (1u << n) - 1u;
  for (std::uint32_t m = 1; m < full; ++m) out.push_back(m);
  return out;
}

std::vector<std::uint32_t> nonempty_subsets(std::uint32_t set_mask) {
  std::vector<std::uint32_t> out;
  // Enumerate sub-masks, then order by size and then by mask value.
  for (std::uint32_t s = set_mask; s != 0; s = (s - 1) & set_mask) out.push_back(s);
  std::sort(out.begin(), out.end(), [](std::uint32_t a, std::uint32_t b) {
    const int pa = std::popcount(a), pb = std::popcount(b);
    return pa != pb ? pa < pb : a < b;
  });
  return out;
}

std::vector<int> cameras_in(std::uint32_t mask) {
  std::vector<int> cams;
  for (int c = 1; c <= 32; ++c) {
    if (mask & (1u << (c - 1))) cams.push_back(c);
  }
  return cams;
}

std::uint32_t camera_mask(std::span<const int> cams) {
  std::uint32_t m = 0;
  for (int c : cams) {
    if (c < 1 || c > 32) throw ArgumentError("camera id " + std::to_string(c) + " out of range");
    m |= 1u << (c - 1);
  }
  return m;
}

namespace {

bool seen_in_any(const Dataset& d, Split split, int pid, std::span<const int> cams) {
  return std::any_of(cams.begin(), cams.end(), [&](int c) { return d.has(split, pid, c); });
}

bool seen_in_all(const Dataset& d, Split split, int pid, std::span<const int> cams) {
  return std::all_of(cams.begin(), cams.end(), [&](int c) { return d.has(split, pid, c); });
}

}  // namespace

std::vector<ProtocolPlan> vsp_plans(int cameras, const Dataset& dataset) {
  const std::uint32_t full = cameras >= 2 && cameras <= 30 ? (1u << cameras) - 1u : 0u;
  std::vector<ProtocolPlan> plans;
  const auto query_ids = dataset.identities(Split::query);
  for (std::uint32_t g : vsp_gallery_masks(cameras)) {
    ProtocolPlan p;
    p.id = static_cast<int>(plans.size());
    p.protocol = Protocol::vsp;
    p.gallery_cams = cameras_in(g);
    p.query_cams = cameras_in(full & ~g);
    for (int pid : query_ids) {
      if (seen_in_any(dataset, Split::query, pid, p.query_cams) &&
          seen_in_any(dataset, Split::gallery, pid, p.gallery_cams)) {
        p.identities.push_back(pid);
      }
    }
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<ProtocolPlan> fsp_plans(std::span<const int> gallery_cams, int cameras, const Dataset& dataset) {
  if (cameras < 2 || cameras > 30) throw ArgumentError("FSP needs between 2 and 30 cameras");
  const std::uint32_t full = (1u << cameras) - 1u;
  const std::uint32_t g = camera_mask(gallery_cams);
  if (g == 0 || (g & ~full) != 0 || g == full) {
    throw ArgumentError("FSP gallery must be a non-empty proper subset of cameras 1.." + std::to_string(cameras));
  }
  const std::vector<int> gcams = cameras_in(g);
  const std::uint32_t q = full & ~g;
  const std::vector<int> qcams = cameras_in(q);

  std::vector<int> ids;
  for (int pid : dataset.identities(Split::query)) {
    if (seen_in_all(dataset, Split::gallery, pid, gcams) && seen_in_all(dataset, Split::query, pid, qcams)) {
      ids.push_back(pid);
    }
  }
  std::vector<ProtocolPlan> plans;
  if (ids.empty()) {
    log::warn("FSP gallery {" + json(gcams).dump() + "}: no identity is seen in every camera; no plans");
    return plans;
  }
  for (std::uint32_t s : nonempty_subsets(q)) {
    ProtocolPlan p;
    p.id = static_cast<int>(plans.size());
    p.protocol = Protocol::fsp;
    p.gallery_cams = gcams;
    p.query_cams = cameras_in(s);
    p.identities = ids;
    plans.push_back(std::move(p));
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Ranking and metrics

std::vector<RankedEntry> rank_gallery(std::span<const double> query, std::span<const Vec> gallery) {
  std::vector<RankedEntry> out;
  out.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) out.push_back({i, euclidean(query, gallery[i])});
  std::sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  });
  return out;
}

Vec gallery_representation(const FusionModel* model, Fuser fuser, std::span<const double> raw, std::size_t k) {
  if (fuser != Fuser::gru) return Vec(raw.begin(), raw.end());
  if (!model) throw ArgumentError("the GRU fuser needs a model");
  return fuse_repeated(*model, raw, k);
}

Vec query_representation(const FusionModel* model, Fuser fuser, std::span<const Vec> sequence) {
  if (sequence.empty()) throw ArgumentError("empty query sequence");
  switch (fuser) {
    case Fuser::gru:
      if (!model) throw ArgumentError("the GRU fuser needs a model");
      return fuse_sequence(*model, sequence).final_hidden();
    case Fuser::mean: return pool_fuse(PoolKind::mean, sequence);
    case Fuser::max: return pool_fuse(PoolKind::max, sequence);
    case Fuser::single_query:
      if (sequence.size() != 1) throw ArgumentError("single-query representation takes one feature");
      return sequence.front();
  }
  return {};
}

std::optional<double> average_precision(std::span<const bool> relevant) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (!relevant[i]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<double>(hits);
}

std::optional<std::size_t> first_correct_rank(std::span<const bool> relevant) {
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (relevant[i]) return i + 1;
  }
  return std::nullopt;
}

std::vector<double> cmc(std::span<const std::size_t> first_ranks, std::size_t depth) {
  std::vector<double> curve(depth, 0.0);
  if (first_ranks.empty()) return curve;
  std::vector<std::size_t> counts(depth + 1, 0);
  for (std::size_t r : first_ranks) {
    if (r >= 1 && r <= depth) ++counts[r];
  }
  std::size_t running = 0;
  for (std::size_t r = 1; r <= depth; ++r) {
    running += counts[r];
    curve[r - 1] = static_cast<double>(running) / static_cast<double>(first_ranks.size());
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Protocol runs

namespace {

class GalleryCache {
 public:
  GalleryCache(const FusionModel* model, const Dataset& d, Fuser fuser) : model_(model), d_(d), fuser_(fuser) {}

  const Vec& get(std::size_t record, std::size_t k) {
    if (fuser_ != Fuser::gru) {
      auto [it, inserted] = raw_.try_emplace(record);
      if (inserted) it->second = d_.record(record).feature_f64();
      return it->second;
    }
    auto& trace = fused_[record];
    if (trace.size() < k) {
      // f_1..f_k of the repeated sequence come from one pass.
      const Vec raw = d_.record(record).feature_f64();
      std::vector<Vec> seq(k, raw);
      trace = fuse_sequence(*model_, seq).fused;
    }
    return trace[k - 1];
  }

 private:
  const FusionModel* model_;
  const Dataset& d_;
  Fuser fuser_;
  std::map<std::size_t, Vec> raw_;
  std::map<std::size_t, std::vector<Vec>> fused_;
};

struct QueryScore {
  double ap = 0.0;
  std::size_t first = 0;
  std::vector<double> cmc;
};

std::optional<QueryScore> score_query(std::span<const double> query, std::span<const std::size_t> gallery_records,
                                      std::span<const Vec> gallery_reprs, const Dataset& d, int pid,
                                      std::size_t depth) {
  const auto ranked = rank_gallery(query, gallery_reprs);
  auto flags = std::make_unique<bool[]>(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    flags[i] = d.record(gallery_records[ranked[i].index]).pid == pid;
  }
  const std::span<const bool> view(flags.get(), ranked.size());
  const auto ap = average_precision(view);
  if (!ap) return std::nullopt;
  QueryScore s;
  s.ap = *ap;
  s.first = *first_correct_rank(view);
  const std::size_t ranks[1] = {s.first};
  s.cmc = cmc(ranks, depth);
  return s;
}

}  // namespace

EvalReport run_protocol(const FusionModel* model, const Dataset& dataset, std::span<const ProtocolPlan> plans,
                        Fuser fuser) {
  if (plans.empty()) throw ArgumentError("run_protocol: no plans");
  if (fuser == Fuser::gru) {
    if (!model) throw ArgumentError("the GRU fuser needs a model");
    if (model->config.input_dim != dataset.dim()) {
      throw DimensionError("model input dimension " + std::to_string(model->config.input_dim) +
                           " does not match dataset dimension " + std::to_string(dataset.dim()));
    }
  }

  EvalReport report;
  report.protocol = plans.front().protocol;
  report.fuser = fuser;
  if (fuser == Fuser::single_query && report.protocol == Protocol::vsp) {
    report.notes.push_back(
        "single-query metrics average each identity over the query cameras in which it appears");
  }
  GalleryCache cache(model, dataset, fuser);
  std::size_t skipped = 0;

  for (const ProtocolPlan& plan : plans) {
    std::vector<std::size_t> gallery;
    for (std::size_t r : dataset.split_records(Split::gallery)) {
      if (std::find(plan.gallery_cams.begin(), plan.gallery_cams.end(), dataset.record(r).cam) !=
          plan.gallery_cams.end()) {
        gallery.push_back(r);
      }
    }
    std::sort(gallery.begin(), gallery.end());

    PlanResult res;
    res.plan_id = plan.id;
    res.protocol = plan.protocol;
    res.fuser = fuser;
    res.gallery_cams = plan.gallery_cams;
    res.query_cams = plan.query_cams;
    res.query_size = plan.query_cams.size();
    const std::size_t depth = std::min(kMaxCmcDepth, gallery.size());
    res.cmc.assign(depth, 0.0);
    if (gallery.empty()) {
      report.plans.push_back(std::move(res));
      continue;
    }

    double ap_sum = 0.0;
    std::map<std::size_t, std::vector<Vec>> reprs_by_k;
    auto reprs_for = [&](std::size_t k) -> const std::vector<Vec>& {
      auto& v = reprs_by_k[k];
      if (v.empty()) {
        for (std::size_t r : gallery) v.push_back(cache.get(r, k));
      }
      return v;
    };

    for (int pid : plan.identities) {
      std::vector<Vec> seq;
      for (int cam : plan.query_cams) {
        const auto recs = dataset.records_of(Split::query, pid, cam);
        if (recs.empty()) {
          if (plan.protocol == Protocol::fsp) {
            throw DataError("FSP plan " + std::to_string(plan.id) + ": identity " + std::to_string(pid) +
                            " has no query record in camera " + std::to_string(cam));
          }
          continue;
        }
        seq.push_back(dataset.record(recs.front()).feature_f64());
      }
      if (seq.empty()) continue;

      if (fuser == Fuser::single_query) {
        // One independent query per camera, averaged per identity.
        double ap = 0.0, hit = 0.0;
        std::vector<double> curve(depth, 0.0);
        std::size_t n = 0;
        for (const Vec& q : seq) {
          auto s = score_query(q, gallery, reprs_for(1), dataset, pid, depth);
          if (!s) continue;
          ap += s->ap;
          hit += s->first == 1 ? 1.0 : 0.0;
          for (std::size_t i = 0; i < depth; ++i) curve[i] += s->cmc[i];
          res.first_correct_ranks.push_back(s->first);
          ++n;
        }
        if (n == 0) {
          ++skipped;
          continue;
        }
        const double inv = 1.0 / static_cast<double>(n);
        ap_sum += ap * inv;
        res.rank1 += hit * inv;
        for (std::size_t i = 0; i < depth; ++i) res.cmc[i] += curve[i] * inv;
        ++res.queries;
        continue;
      }

      const Vec q = query_representation(model, fuser, seq);
      auto s = score_query(q, gallery, reprs_for(seq.size()), dataset, pid, depth);
      if (!s) {
        ++skipped;
        continue;
      }
      ap_sum += s->ap;
      res.rank1 += s->first == 1 ? 1.0 : 0.0;
      for (std::size_t i = 0; i < depth; ++i) res.cmc[i] += s->cmc[i];
      res.first_correct_ranks.push_back(s->first);
      ++res.queries;
    }

    if (res.queries > 0) {
      const double inv = 1.0 / static_cast<double>(res.queries);
      res.rank1 *= inv;
      res.map = ap_sum * inv;
      for (double& v : res.cmc) v *= inv;
    }
    report.plans.push_back(std::move(res));
  }
  if (skipped > 0) {
    const std::string msg = std::to_string(skipped) + " queries without a relevant gallery item were excluded";
    log::warn(msg);
    report.notes.push_back(msg);
  }

  // Aggregates over plans that had at least one query, in plan order.
  std::map<std::size_t, GroupSummary> groups;
  std::size_t counted = 0;
  for (const PlanResult& p : report.plans) {
    if (p.queries == 0) continue;
    ++counted;
    report.rank1 += p.rank1;
    report.map += p.map;
    GroupSummary& g = groups[p.query_size];
    g.query_size = p.query_size;
    if (g.plans == 0) {
      g.cmc = p.cmc;
    } else {
      const std::size_t n = std::min(g.cmc.size(), p.cmc.size());
      g.cmc.resize(n);
      for (std::size_t i = 0; i < n; ++i) g.cmc[i] += p.cmc[i];
    }
    ++g.plans;
    g.rank1 += p.rank1;
    g.map += p.map;
  }
  if (counted > 0) {
    report.rank1 /= static_cast<double>(counted);
    report.map /= static_cast<double>(counted);
  }
  for (auto& [size, g] : groups) {
    const double inv = 1.0 / static_cast<double>(g.plans);
    g.rank1 *= inv;
    g.map *= inv;
    for (double& v : g.cmc) v *= inv;
    report.by_size.push_back(std::move(g));
  }
  return report;
}

OrderReport order_invariance_experiment(const FusionModel* model, const Dataset& dataset,
                                        std::span<const ProtocolPlan> plans, Fuser fuser, std::size_t num_orders,
                                        std::uint64_t seed) {
  if (num_orders == 0) throw ArgumentError("order experiment needs at least one ordering");
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(dataset.camera_count()));
  OrderReport out;
  for (std::size_t trial = 0; trial < num_orders; ++trial) {
    std::iota(order.begin(), order.end(), 1);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<ProtocolPlan> permuted(plans.begin(), plans.end());
    for (ProtocolPlan& p : permuted) {
      std::stable_sort(p.query_cams.begin(), p.query_cams.end(), [&](int a, int b) {
        return std::find(order.begin(), order.end(), a) < std::find(order.begin(), order.end(), b);
      });
    }
    const EvalReport r = run_protocol(model, dataset, permuted, fuser);
    out.trials.push_back({order, r.rank1, r.map});
  }
  auto [rmin, rmax] = std::minmax_element(out.trials.begin(), out.trials.end(),
                                          [](const OrderTrial& a, const OrderTrial& b) { return a.rank1 < b.rank1; });
  auto [mmin, mmax] = std::minmax_element(out.trials.begin(), out.trials.end(),
                                          [](const OrderTrial& a, const OrderTrial& b) { return a.map < b.map; });
  out.rank1_spread = rmax->rank1 - rmin->rank1;
  out.map_spread = mmax->map - mmin->map;
  return out;
}

// ---------------------------------------------------------------------------
// Output

json to_json(const EvalReport& report) {
  json plans = json::array();
  for (const auto& p : report.plans) {
    plans.push_back({{"plan", p.plan_id},
                     {"protocol", to_string(p.protocol)},
                     {"fuser", to_string(p.fuser)},
                     {"gallery_cams", p.gallery_cams},
                     {"query_cams", p.query_cams},
                     {"query_size", p.query_size},
                     {"queries", p.queries},
                     {"rank1", p.rank1},
                     {"map", p.map},
                     {"cmc", p.cmc},
                     {"first_correct_ranks", p.first_correct_ranks}});
  }
  json groups = json::array();
  for (const auto& g : report.by_size) {
    groups.push_back({{"query_size", g.query_size}, {"plans", g.plans}, {"rank1", g.rank1}, {"map", g.map},
                      {"cmc", g.cmc}});
  }
  return {{"protocol", to_string(report.protocol)},
          {"fuser", to_string(report.fuser)},
          {"rank1", report.rank1},
          {"map", report.map},
          {"notes", report.notes},
          {"by_query_size", groups},
          {"plans", plans}};
}

json to_json(const OrderReport& report) {
  json trials = json::array();
  for (const auto& t : report.trials) {
    trials.push_back({{"camera_order", t.camera_order}, {"rank1", t.rank1}, {"map", t.map}});
  }
  return {{"trials", trials}, {"rank1_spread", report.rank1_spread}, {"map_spread", report.map_spread}};
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream out;
  out << "protocol " << to_string(report.protocol) << "  fuser " << to_string(report.fuser) << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%5s %6s %8s %8s %8s\n", "|Q|", "plans", "rank-1", "rank-5", "mAP");
  out << line;
  for (const auto& g : report.by_size) {
    const double r5 = g.cmc.size() >= 5 ? g.cmc[4] : (g.cmc.empty() ? 0.0 : g.cmc.back());
    std::snprintf(line, sizeof(line), "%5zu %6zu %8.2f %8.2f %8.2f\n", g.query_size, g.plans, 100.0 * g.rank1,
                  100.0 * r5, 100.0 * g.map);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%5s %6zu %8.2f %8s %8.2f\n", "all", report.plans.size(), 100.0 * report.rank1, "",
                100.0 * report.map);
  out << line;
  for (const auto& n : report.notes) out << "note: " << n << "\n";
  return out.str();
}

}  // namespace seqfuse
