#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pcgrpo/auditor.hpp"
#include "pcgrpo/rng.hpp"

namespace pcgrpo::audit {
namespace {

const std::vector<OptionId> kOptions = {"A", "B", "C", "abstain"};

AuditItem item(std::string id, OptionId g, std::map<std::string, OptionId> answers,
               std::optional<OptionId> u = std::nullopt) {
  return {std::move(id), std::move(g), std::move(answers), std::move(u), kOptions};
}

/// Labels given directly, for the metric examples.
std::vector<CommitteeLabel> labels(std::initializer_list<const char*> ls) {
  std::vector<CommitteeLabel> out;
  for (const char* l : ls) out.push_back(l ? CommitteeLabel(l) : std::nullopt);
  return out;
}

TEST(Committee, LabelExamples) {
  const AuditItem it = item("q", "A", {{"m1", "A"}, {"m2", "A"}, {"m3", "B"}});
  EXPECT_EQ(committee_label(it, {{"m1", "m2", "m3"}, 2}), CommitteeLabel("A"));
  EXPECT_EQ(committee_label(it, {{"m1", "m2", "m3"}, 3}), std::nullopt);
  const AuditItem unanimous = item("q", "A", {{"m1", "A"}, {"m2", "A"}, {"m3", "A"}});
  EXPECT_EQ(committee_label(unanimous, {{"m1", "m2", "m3"}, 3}), CommitteeLabel("A"));
  const AuditItem split = item("q", "A", {{"m1", "A"}, {"m2", "B"}, {"m3", "C"}});
  EXPECT_EQ(committee_label(split, {{"m1", "m2", "m3"}, 2}), std::nullopt);
  // Two options reach K = 1; a plurality tie at the top is no consensus.
  EXPECT_EQ(committee_label(split, {{"m1", "m2"}, 1}), std::nullopt);
  const AuditItem four = item("q", "A", {{"m1", "A"}, {"m2", "A"}, {"m3", "B"}, {"m4", "C"}});
  EXPECT_EQ(committee_label(four, {{"m1", "m2", "m3", "m4"}, 1}), CommitteeLabel("A"));
}

TEST(Committee, Errors) {
  const AuditItem it = item("q", "A", {{"m1", "A"}});
  EXPECT_THROW(committee_label(it, {{"m1", "m2"}, 1}), ValidationError);
  EXPECT_THROW(committee_label(it, {{"m1"}, 2}), ValidationError);
  EXPECT_THROW(committee_label(it, {{}, 1}), ValidationError);
  AuditItem bad = it;
  bad.benchmark_label = "Z";
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Metrics, PrecisionExamples) {
  const std::vector<AuditItem> items = {item("1", "A", {}, "A"), item("2", "A", {}, "B"),
                                        item("3", "A", {}, "A"), item("4", "A", {}, "A")};
  EXPECT_NEAR(*precision(items, labels({"A", "A", "B", "A"})), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(*precision(std::span(items).subspan(0, 1), labels({"A"})), 1.0);
  EXPECT_FALSE(precision(items, labels({"B", nullptr, "C", "B"})).has_value());
  std::vector<AuditItem> unlabeled = {item("1", "A", {})};
  EXPECT_THROW(precision(unlabeled, labels({"A"})), ValidationError);
}

TEST(Metrics, ForExamples) {
  const std::vector<AuditItem> items = {item("1", "A", {}, "A"), item("2", "A", {}, "B"),
                                        item("3", "A", {}, "A")};
  EXPECT_DOUBLE_EQ(*for_rate(items, labels({"B", nullptr, "A"})), 0.5);
  EXPECT_FALSE(for_rate(items, labels({"A", "A", "A"})).has_value());
  EXPECT_EQ(*for_rate(items, labels({"A", "C", "A"})), 0.0);
}

TEST(Metrics, Objective) {
  EXPECT_DOUBLE_EQ(objective(1.0, 0.0, 0.3), 1.3);
  EXPECT_DOUBLE_EQ(objective(0.5, std::nullopt, 0.3), 0.8);
  EXPECT_TRUE(std::isinf(objective(std::nullopt, 0.5, 0.3)));
  EXPECT_EQ(kDefaultLambda, 0.3);
}

/// Six items: the oracle answers the user label, the others answer
/// independently of it.
std::vector<AuditItem> oracle_fixture() {
  return {
      item("1", "A", {{"oracle", "A"}, {"r1", "B"}, {"r2", "A"}}, "A"),
      item("2", "B", {{"oracle", "C"}, {"r1", "B"}, {"r2", "A"}}, "C"),
      item("3", "C", {{"oracle", "C"}, {"r1", "A"}, {"r2", "B"}}, "C"),
      item("4", "A", {{"oracle", "B"}, {"r1", "A"}, {"r2", "A"}}, "B"),
      item("5", "B", {{"oracle", "B"}, {"r1", "C"}, {"r2", "C"}}, "B"),
      item("6", "C", {{"oracle", "C"}, {"r1", "C"}, {"r2", "A"}}, "C"),
  };
}

TEST(Optimize, OracleFixture) {
  const auto items = oracle_fixture();
  const auto res = optimize({"r2", "oracle", "r1"}, items);
  EXPECT_EQ(res.config.members, std::vector<std::string>{"oracle"});
  EXPECT_EQ(res.config.K, 1);
  EXPECT_NEAR(res.outcome.objective, 1.3, 1e-12);
  EXPECT_EQ(res.configurations_visited, 12u);
  // Strictly above every other configuration.
  for (const auto& members : std::vector<std::vector<std::string>>{
           {"r1"}, {"r2"}, {"oracle", "r1"}, {"oracle", "r2"}, {"r1", "r2"}, {"oracle", "r1", "r2"}})
    for (int K = 1; K <= static_cast<int>(members.size()); ++K)
      EXPECT_LT(evaluate(items, {members, K}).objective, 1.3 - 1e-9);
}

/// Independent exhaustive search through evaluate() with an explicit
/// ordering key.
OptimizeResult brute_force(const std::vector<std::string>& pool, std::span<const AuditItem> items, double lambda) {
  OptimizeResult best;
  bool have = false;
  const std::size_t m = pool.size();
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    std::vector<std::string> members;
    for (std::size_t k = 0; k < m; ++k)
      if (mask & (std::size_t{1} << k)) members.push_back(pool[k]);
    for (int K = 1; K <= static_cast<int>(members.size()); ++K) {
      const CommitteeConfig cfg{members, K};
      const AuditOutcome out = evaluate(items, cfg, lambda);
      bool take = !have;
      if (have) {
        const double a = out.objective, b = best.outcome.objective;
        const bool tie = (std::isinf(a) && std::isinf(b)) || std::abs(a - b) <= 1e-12;
        if (tie) {
          take = std::make_tuple(cfg.members.size(), -cfg.K, cfg.members) <
                 std::make_tuple(best.config.members.size(), -best.config.K, best.config.members);
        } else {
          take = a > b;
        }
      }
      if (take) {
        have = true;
        best.config = cfg;
        best.outcome = out;
      }
    }
  }
  return best;
}

TEST(Optimize, MatchesBruteForceOnRandomData) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5);
    std::vector<std::string> pool;
    for (std::size_t k = 0; k < m; ++k) pool.push_back("model" + std::to_string(k));
    std::vector<AuditItem> items;
    const std::size_t n = 1 + rng.uniform_index(12);
    for (std::size_t i = 0; i < n; ++i) {
      auto pick = [&] { return kOptions[rng.uniform_index(kOptions.size())]; };
      AuditItem it = item(std::to_string(i), pick(), {}, std::nullopt);
      it.user_label = rng.bernoulli(0.7) ? it.benchmark_label : pick();
      for (const auto& p : pool) it.model_answers[p] = rng.bernoulli(0.6) ? *it.user_label : pick();
      items.push_back(it);
    }
    const double lambda = trial % 2 ? 0.3 : rng.uniform(0.0, 2.0);
    const auto fast = optimize(pool, items, lambda);
    const auto slow = brute_force(pool, items, lambda);
    ASSERT_EQ(fast.config, slow.config) << "trial " << trial;
    if (std::isfinite(slow.outcome.objective)) {
      EXPECT_NEAR(fast.outcome.objective, slow.outcome.objective, 1e-12);
    }
  }
}

TEST(Optimize, InvariantUnderItemOrder) {
  auto items = oracle_fixture();
  const auto a = optimize({"oracle", "r1", "r2"}, items);
  std::reverse(items.begin(), items.end());
  const auto b = optimize({"oracle", "r1", "r2"}, items);
  EXPECT_EQ(a.config, b.config);
  EXPECT_DOUBLE_EQ(a.outcome.objective, b.outcome.objective);
}

TEST(Optimize, Errors) {
  const auto items = oracle_fixture();
  EXPECT_THROW(optimize({}, items), ValidationError);
  EXPECT_THROW(optimize({"oracle", "ghost"}, items), ValidationError);
  std::vector<std::string> big;
  for (int i = 0; i < 13; ++i) big.push_back("m" + std::to_string(i));
  EXPECT_THROW(optimize(big, items), ValidationError);
}

TEST(Clean, NoiseRatio) {
  std::vector<AuditItem> items;
  for (int i = 0; i < 10; ++i) {
    const OptionId g = i < 2 ? "B" : "A";
    items.push_back(item(std::to_string(i), g, {{"m1", "A"}, {"m2", "A"}}));
  }
  const auto res = clean(items, {{"m1", "m2"}, 2});
  EXPECT_DOUBLE_EQ(res.noise_ratio, 0.2);
  EXPECT_EQ(res.kept.size(), 8u);
  ASSERT_EQ(res.removed.size(), 2u);
  EXPECT_EQ(res.removed[0].item_id, "0");

  std::vector<AuditItem> agree(items.begin() + 2, items.end());
  EXPECT_EQ(clean(agree, {{"m1", "m2"}, 2}).noise_ratio, 0.0);
  // No consensus counts as disagreement.
  std::vector<AuditItem> split = {item("x", "A", {{"m1", "A"}, {"m2", "B"}})};
  EXPECT_EQ(clean(split, {{"m1", "m2"}, 1}).noise_ratio, 1.0);
}

TEST(Io, JsonlRoundTripAndValidation) {
  const auto items = oracle_fixture();
  const auto back = items_from_jsonl(items_to_jsonl(items));
  ASSERT_EQ(back.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(back[i].item_id, items[i].item_id);
    EXPECT_EQ(back[i].model_answers, items[i].model_answers);
    EXPECT_EQ(back[i].user_label, items[i].user_label);
  }
  EXPECT_THROW(items_from_jsonl(R"({"item_id":"1","benchmark_label":"A","model_answers":{},"options":["A"],"extra":1})"),
               ValidationError);
  EXPECT_THROW(items_from_jsonl(R"({"item_id":"1","benchmark_label":"Z","model_answers":{},"options":["A"]})"),
               ValidationError);
  const auto report = report_json(optimize({"oracle", "r1", "r2"}, items), 0.5);
  EXPECT_EQ(report["best_committee"], nlohmann::json({"oracle"}));
  EXPECT_EQ(report["K"], 1);
  EXPECT_EQ(report["noise_ratio"], 0.5);
}

}  // namespace
}  // namespace pcgrpo::audit
