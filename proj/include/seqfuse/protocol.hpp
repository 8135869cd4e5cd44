// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocols, gallery ranking and retrieval metrics.
//
// Variable Set Protocol (VSP): every non-empty proper camera subset serves as
// the gallery once, its complement as the query set; identities qualify when
// seen in at least one query and one gallery camera.
//
// Fixed Set Protocol (FSP): for a fixed gallery set, every non-empty subset of
// the complementary query set is evaluated over one identity list, namely
// those seen in all gallery and all query cameras.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqfuse/dataset.hpp"
#include "seqfuse/fusion.hpp"

namespace seqfuse {

enum class Protocol { vsp, fsp };
enum class Fuser { gru, mean, max, single_query };

std::string_view to_string(Protocol p);
std::string_view to_string(Fuser f);
Protocol parse_protocol(std::string_view s);
Fuser parse_fuser(std::string_view s);

struct ProtocolPlan {
  int id = 0;
  Protocol protocol = Protocol::vsp;
  std::vector<int> gallery_cams;
  std::vector<int> query_cams;  // fusion order
  std::vector<int> identities;  // sorted
};

/// Camera subsets as bit masks over cameras 1..n (bit c-1 = camera c).
std::vector<std::uint32_t> vsp_gallery_masks(int n);
std::vector<std::uint32_t> nonempty_subsets(std::uint32_t set_mask);
std::vector<int> cameras_in(std::uint32_t mask);
std::uint32_t camera_mask(std::span<const int> cams);

std::vector<ProtocolPlan> vsp_plans(int cameras, const Dataset& dataset);
/// Empty (with a warning) when no identity is seen in every camera.
std::vector<ProtocolPlan> fsp_plans(std::span<const int> gallery_cams, int cameras, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Ranking and metrics

struct RankedEntry {
  std::size_t index = 0;  // position in the gallery list that was ranked
  double distance = 0.0;
};

/// Gallery sorted ascending by distance to the query; ties by index.
std::vector<RankedEntry> rank_gallery(std::span<const double> query, std::span<const Vec> gallery);

/// Comparison feature for a gallery record: for the GRU fuser the record
/// repeated k times and fused, otherwise the raw feature.
Vec gallery_representation(const FusionModel* model, Fuser fuser, std::span<const double> raw, std::size_t k);
/// Query representation of an ordered sequence of raw features.
Vec query_representation(const FusionModel* model, Fuser fuser, std::span<const Vec> sequence);

/// Mean over relevant positions i of precision@i; nullopt with no relevant item.
std::optional<double> average_precision(std::span<const bool> relevant);
/// 1-based rank of the first relevant item.
std::optional<std::size_t> first_correct_rank(std::span<const bool> relevant);
/// CMC[r-1] = share of queries whose first correct rank is <= r, r = 1..depth.
std::vector<double> cmc(std::span<const std::size_t> first_ranks, std::size_t depth);

// ---------------------------------------------------------------------------
// Protocol runs

struct PlanResult {
  int plan_id = 0;
  Protocol protocol = Protocol::vsp;
  Fuser fuser = Fuser::gru;
  std::vector<int> gallery_cams;
  std::vector<int> query_cams;
  std::size_t query_size = 0;
  std::size_t queries = 0;
  double rank1 = 0.0;
  double map = 0.0;
  std::vector<double> cmc;
  std::vector<std::size_t> first_correct_ranks;
};

struct GroupSummary {
  std::size_t query_size = 0;
  std::size_t plans = 0;
  double rank1 = 0.0;
  double map = 0.0;
  std::vector<double> cmc;
};

struct EvalReport {
  Protocol protocol = Protocol::vsp;
  Fuser fuser = Fuser::gru;
  std::vector<PlanResult> plans;
  std::vector<GroupSummary> by_size;
  double rank1 = 0.0;  // mean over plans
  double map = 0.0;    // mean over plans
  std::vector<std::string> notes;
};

inline constexpr std::size_t kMaxCmcDepth = 50;

/// `model` may be null unless fuser == gru.
EvalReport run_protocol(const FusionModel* model, const Dataset& dataset, std::span<const ProtocolPlan> plans,
                        Fuser fuser);

struct OrderTrial {
  std::vector<int> camera_order;  // permutation of camera ids
  double rank1 = 0.0;
  double map = 0.0;
};

struct OrderReport {
  std::vector<OrderTrial> trials;
  double rank1_spread = 0.0;  // max - min
  double map_spread = 0.0;
};

/// Re-runs `plans` under `num_orders` random camera orderings (each plan's
/// query cameras are re-ordered by their position in the permutation) and
/// reports the spread of plan-averaged rank-1 and mAP.
OrderReport order_invariance_experiment(const FusionModel* model, const Dataset& dataset,
                                        std::span<const ProtocolPlan> plans, Fuser fuser, std::size_t num_orders,
                                        std::uint64_t seed);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const OrderReport& report);
/// Aligned-column summary grouped by query-set size.
std::string format_summary(const EvalReport& report);

}  // namespace seqfuse
