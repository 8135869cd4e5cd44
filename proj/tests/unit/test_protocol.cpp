// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "protocol_oracle.hpp"
#include "seqfuse/error.hpp"
#include "seqfuse/log.hpp"
#include "seqfuse/protocol.hpp"

using namespace seqfuse;
using seqfuse::testing::all_vsp_splits;
using seqfuse::testing::oracle_protocol;
using seqfuse::testing::random_instance;

namespace {

struct QuietWarnings {
  log::Sink previous;
  QuietWarnings() : previous(log::set_warning_sink([](const std::string&) {})) {}
  ~QuietWarnings() { log::set_warning_sink(previous); }
};

FeatureRecord rec(std::string id, int pid, int cam, Split split, std::vector<float> f) {
  return {std::move(id), pid, cam, split, std::move(f), {}};
}

}  // namespace

TEST_CASE("average precision and first correct rank") {
  const bool a[] = {true, false, true};
  CHECK(*average_precision(a) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(*first_correct_rank(a) == 1);
  const bool b[] = {false, false, true, true};
  CHECK(*average_precision(b) == doctest::Approx((1.0 / 3.0 + 2.0 / 4.0) / 2.0).epsilon(1e-15));
  CHECK(*first_correct_rank(b) == 3);
  const bool none[] = {false, false};
  CHECK_FALSE(average_precision(none).has_value());
  CHECK_FALSE(first_correct_rank(none).has_value());
}

TEST_CASE("cmc curve") {
  const std::size_t ranks[] = {1, 3, 1, 7};
  const auto curve = cmc(ranks, 5);
  CHECK(curve == std::vector<double>{0.5, 0.5, 0.75, 0.75, 0.75});
  CHECK(cmc(std::span<const std::size_t>{}, 3) == std::vector<double>{0, 0, 0});
}

TEST_CASE("ranking breaks distance ties by gallery position") {
  const std::vector<Vec> gallery = {{1, 0}, {0, 1}, {0, 0}, {-1, 0}};
  const auto r = rank_gallery(Vec{0, 0}, gallery);
  CHECK(r[0].index == 2);
  CHECK(r[1].index == 0);
  CHECK(r[2].index == 1);
  CHECK(r[3].index == 3);
}

TEST_CASE("plan counts") {
  for (int n = 2; n <= 10; ++n) {
    const auto masks = vsp_gallery_masks(n);
    CHECK(masks.size() == (1u << n) - 2u);
    const std::set<std::uint32_t> distinct(masks.begin(), masks.end());
    CHECK(distinct.size() == masks.size());
    for (std::uint32_t q = 1; q < (1u << n); ++q) {
      const auto subsets = nonempty_subsets(q);
      CHECK(subsets.size() == (1u << std::popcount(q)) - 1u);
      for (std::size_t i = 1; i < subsets.size(); ++i) {
        CHECK(std::popcount(subsets[i - 1]) <= std::popcount(subsets[i]));
      }
    }
  }
  CHECK_THROWS_AS(vsp_gallery_masks(1), ArgumentError);
}

TEST_CASE("VSP plans on a fully observed dataset") {
  std::vector<FeatureRecord> recs;
  for (int pid = 1; pid <= 2; ++pid) {
    for (int cam = 1; cam <= 3; ++cam) {
      recs.push_back(rec("q" + std::to_string(pid) + std::to_string(cam), pid, cam, Split::query, {float(pid)}));
      recs.push_back(rec("g" + std::to_string(pid) + std::to_string(cam), pid, cam, Split::gallery, {float(pid)}));
    }
  }
  const Dataset d(recs, 3);
  const auto plans = vsp_plans(3, d);
  REQUIRE(plans.size() == 6);
  CHECK(plans[0].gallery_cams == std::vector<int>{1});
  CHECK(plans[0].query_cams == std::vector<int>{2, 3});
  for (const auto& p : plans) CHECK(p.identities == std::vector<int>{1, 2});

  const EvalReport r = run_protocol(nullptr, d, plans, Fuser::mean);
  CHECK(r.rank1 == 1.0);
  CHECK(r.map == 1.0);
  REQUIRE(r.by_size.size() == 2);
  CHECK(r.by_size[0].query_size == 1);
  CHECK(r.by_size[0].plans == 3);
}

TEST_CASE("FSP plans") {
  std::vector<FeatureRecord> recs;
  for (int pid = 1; pid <= 3; ++pid) {
    for (int cam = 1; cam <= 4; ++cam) {
      // Identity 3 is missing from camera 4 and cannot enter FSP plans.
      if (pid == 3 && cam == 4) continue;
      recs.push_back(rec("q" + std::to_string(pid) + std::to_string(cam), pid, cam, Split::query, {float(pid), 0.f}));
      recs.push_back(rec("g" + std::to_string(pid) + std::to_string(cam), pid, cam, Split::gallery, {float(pid), 1.f}));
    }
  }
  const Dataset d(recs, 4);
  const int gallery[] = {1};
  const auto plans = fsp_plans(gallery, 4, d);
  CHECK(plans.size() == 7);
  for (const auto& p : plans) {
    CHECK(p.identities == std::vector<int>{1, 2});
    CHECK(p.gallery_cams == std::vector<int>{1});
  }
  CHECK(plans.front().query_cams.size() == 1);
  CHECK(plans.back().query_cams == std::vector<int>{2, 3, 4});

  const int bad_full[] = {1, 2, 3, 4};
  CHECK_THROWS_AS(fsp_plans(bad_full, 4, d), ArgumentError);
  const int bad_range[] = {5};
  CHECK_THROWS_AS(fsp_plans(bad_range, 4, d), ArgumentError);

  std::vector<std::string> warnings;
  auto prev = log::set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const int only4[] = {4};
  std::vector<FeatureRecord> sparse = {rec("q1", 1, 1, Split::query, {0.f}), rec("g1", 1, 2, Split::gallery, {0.f})};
  CHECK(fsp_plans(only4, 4, Dataset(sparse, 4)).empty());
  log::set_warning_sink(prev);
  CHECK(warnings.size() == 1);
}

TEST_CASE("run_protocol agrees with the brute-force oracle") {
  QuietWarnings quiet;
  std::mt19937_64 rng(2718);
  FusionConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 4;
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    int cameras = 0;
    const Dataset d = random_instance(rng, cameras);
    const FusionModel model = init_params(static_cast<std::uint64_t>(trial), cfg);
    for (Fuser fuser : {Fuser::gru, Fuser::mean, Fuser::max, Fuser::single_query}) {
      const auto plans = vsp_plans(cameras, d);
      const EvalReport got = run_protocol(&model, d, plans, fuser);
      const auto want = oracle_protocol(&model, d, all_vsp_splits(cameras), fuser);
      REQUIRE(got.plans.size() == want.plans.size());
      worst = std::max({worst, std::abs(got.map - want.map), std::abs(got.rank1 - want.rank1)});
      for (std::size_t i = 0; i < got.plans.size(); ++i) {
        CHECK(got.plans[i].gallery_cams == want.plans[i].gallery_cams);
        CHECK(got.plans[i].queries == want.plans[i].queries);
        worst = std::max({worst, std::abs(got.plans[i].map - want.plans[i].map),
                          std::abs(got.plans[i].rank1 - want.plans[i].rank1)});
        REQUIRE(got.plans[i].cmc.size() == want.plans[i].cmc.size());
        for (std::size_t r = 0; r < got.plans[i].cmc.size(); ++r) {
          worst = std::max(worst, std::abs(got.plans[i].cmc[r] - want.plans[i].cmc[r]));
        }
      }
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("metric invariants") {
  QuietWarnings quiet;
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    int cameras = 0;
    const Dataset d = random_instance(rng, cameras);
    const EvalReport r = run_protocol(nullptr, d, vsp_plans(cameras, d), Fuser::mean);
    for (const PlanResult& p : r.plans) {
      CHECK(p.map >= 0.0);
      CHECK(p.map <= 1.0);
      CHECK(p.rank1 >= 0.0);
      CHECK(p.rank1 <= 1.0);
      for (std::size_t i = 1; i < p.cmc.size(); ++i) CHECK(p.cmc[i - 1] <= p.cmc[i] + 1e-15);
      if (!p.cmc.empty()) CHECK(p.cmc[0] == doctest::Approx(p.rank1).epsilon(1e-12));
      CHECK(p.cmc.size() <= kMaxCmcDepth);
      if (!p.cmc.empty()) CHECK(p.cmc.back() <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("order experiment is a no-op for order-insensitive fusers") {
  QuietWarnings quiet;
  std::mt19937_64 rng(5);
  int cameras = 0;
  const Dataset d = random_instance(rng, cameras);
  const auto plans = vsp_plans(cameras, d);
  const OrderReport r = order_invariance_experiment(nullptr, d, plans, Fuser::max, 5, 1);
  CHECK(r.trials.size() == 5);
  CHECK(r.rank1_spread == 0.0);
  CHECK(r.map_spread == 0.0);
  CHECK_THROWS_AS(order_invariance_experiment(nullptr, d, plans, Fuser::max, 0, 1), ArgumentError);
}

TEST_CASE("argument checks") {
  std::vector<FeatureRecord> recs = {rec("q", 1, 1, Split::query, {0.f, 1.f}), rec("g", 1, 2, Split::gallery, {0.f, 1.f})};
  const Dataset d(recs, 2);
  const auto plans = vsp_plans(2, d);
  CHECK_THROWS_AS(run_protocol(nullptr, d, plans, Fuser::gru), ArgumentError);
  FusionConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 2;
  const FusionModel wrong = zero_model(cfg);
  CHECK_THROWS_AS(run_protocol(&wrong, d, plans, Fuser::gru), DimensionError);
  CHECK_THROWS_AS(run_protocol(nullptr, d, std::span<const ProtocolPlan>{}, Fuser::mean), ArgumentError);
  CHECK(parse_fuser("single") == Fuser::single_query);
  CHECK(parse_protocol(to_string(Protocol::fsp)) == Protocol::fsp);
  CHECK_THROWS_AS(parse_fuser("lstm"), ArgumentError);
}

TEST_CASE("report serialisation") {
  std::vector<FeatureRecord> recs = {rec("q", 1, 1, Split::query, {0.f}), rec("g", 1, 2, Split::gallery, {0.f})};
  const Dataset d(recs, 2);
  const EvalReport r = run_protocol(nullptr, d, vsp_plans(2, d), Fuser::mean);
  const auto j = to_json(r);
  CHECK(j["protocol"] == "vsp");
  CHECK(j["plans"].size() == 2);
  CHECK(j["rank1"].get<double>() == 1.0);
  const std::string text = format_summary(r);
  CHECK(text.find("rank-1") != std::string::npos);
}
