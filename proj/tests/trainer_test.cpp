#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "pcgrpo/trainer.hpp"

namespace pcgrpo {
namespace {

namespace fs = std::filesystem;

std::vector<PuzzleInstance> rotation_set(std::size_t n, std::uint64_t seed) {
  return generate_dataset({{PuzzleKind::Rotation, n, std::nullopt}}, seed, synthetic_source(seed));
}

std::vector<PuzzleInstance> mixed_set(std::uint64_t seed) {
  return generate_dataset({{PuzzleKind::Jigsaw, 24, std::nullopt},
                           {PuzzleKind::PatchFit, 24, std::nullopt},
                           {PuzzleKind::Rotation, 16, std::nullopt}},
                          seed, synthetic_source(seed));
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pcgrpo_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig small_run(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.train.batch_size = 8;
  cfg.epochs = 2;
  cfg.threads = 1;
  return cfg;
}

TEST(Config, NestedAndDottedKeysAgree) {
  const auto nested = run_config_from_json(nlohmann::json::parse(R"({
    "grpo": {"G": 4, "learning_rate": 0.01, "batch_size": 3},
    "curriculum": {"sigma": 2.0, "enabled": false},
    "care": {"enabled": true, "bonus_coefficient": 0.25},
    "mix_ratios": {"rotation": 5},
    "seed": 11, "epochs": 3
  })"));
  const auto dotted = run_config_from_json(nlohmann::json::parse(R"({
    "grpo.G": 4, "grpo.learning_rate": 0.01, "grpo.batch_size": 3,
    "curriculum.sigma": 2.0, "curriculum.enabled": false,
    "care.enabled": true, "care.bonus_coefficient": 0.25,
    "mix_ratios": {"rotation": 5}, "seed": 11, "epochs": 3
  })"));
  for (const auto* c : {&nested, &dotted}) {
    EXPECT_EQ(c->train.G, 4);
    EXPECT_EQ(c->train.learning_rate, 0.01);
    EXPECT_EQ(c->train.batch_size, 3);
    EXPECT_EQ(c->train.sigma, 2.0);
    EXPECT_FALSE(c->train.curriculum);
    ASSERT_TRUE(c->train.care.has_value());
    EXPECT_EQ(c->train.care->bonus_coefficient, 0.25);
    EXPECT_EQ(c->mix_ratios.at("rotation"), 5u);
    EXPECT_EQ(c->seed, 11u);
  }
  EXPECT_EQ(run_config_to_json(nested), run_config_to_json(dotted));
  const auto again = run_config_from_json(run_config_to_json(nested));
  EXPECT_EQ(run_config_to_json(again), run_config_to_json(nested));
}

TEST(Config, Defaults) {
  const auto c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.train.G, 8);
  EXPECT_EQ(c.train.epsilon, 0.2);
  EXPECT_EQ(c.train.batch_size, 16);
  EXPECT_EQ(c.train.iterations_per_update, 1);
  EXPECT_EQ(c.train.sigma, 1.8);
  EXPECT_FALSE(c.train.care.has_value());
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"grpo": {"G": 8, "lr": 1}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"grpo": {"beta_kl": 0.04}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"grpo": {"G": "eight"}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"mix_ratios": {"sudoku": 3}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse("[]")), ValidationError);
}

TEST(Batches, Examples) {
  const auto data = mixed_set(1);
  Rng rng(0);
  const auto b = make_batches(data, {{"rotation", 4}}, 2, rng);
  ASSERT_EQ(b.size(), 2u);
  for (const auto& batch : b) {
    EXPECT_EQ(batch.size(), 2u);
    for (auto i : batch) EXPECT_EQ(data[i].kind(), PuzzleKind::Rotation);
  }
  const auto c = make_batches(data, {{"jigsaw", 7}, {"patchfit", 6}, {"rotation", 2}}, 4, rng);
  std::map<PuzzleKind, int> counts;
  std::size_t total = 0;
  for (const auto& batch : c) {
    total += batch.size();
    for (auto i : batch) ++counts[data[i].kind()];
  }
  EXPECT_EQ(total, 15u);
  EXPECT_EQ(c.back().size(), 3u);
  EXPECT_EQ(counts[PuzzleKind::Jigsaw], 7);
  EXPECT_EQ(counts[PuzzleKind::PatchFit], 6);
  EXPECT_EQ(counts[PuzzleKind::Rotation], 2);
  EXPECT_EQ(make_batches(data, {}, 64, rng).front().size(), data.size());
  EXPECT_THROW(make_batches(data, {{"rotation", 17}}, 4, rng), ValidationError);
}

TEST(Run, MetricsAreDeterministic) {
  const auto data = mixed_set(2);
  const auto a = run(small_run(5), data);
  const auto b = run(small_run(5), data);
  EXPECT_EQ(metrics_to_csv(a.metrics), metrics_to_csv(b.metrics));
  EXPECT_EQ(a.state.policies, b.state.policies);
  const auto c = run(small_run(6), data);
  EXPECT_NE(metrics_to_csv(a.metrics), metrics_to_csv(c.metrics));
}

TEST(Run, ThreadCountDoesNotChangeResults) {
  const auto data = mixed_set(3);
  auto cfg = small_run(7);
  const auto serial = run(cfg, data);
  cfg.threads = 4;
  const auto parallel = run(cfg, data);
  EXPECT_EQ(metrics_to_csv(serial.metrics), metrics_to_csv(parallel.metrics));
  EXPECT_EQ(serial.state.policies, parallel.state.policies);
}

TEST(Run, MetricsShape) {
  const auto data = mixed_set(4);
  const auto res = run(small_run(1), data);
  ASSERT_EQ(res.metrics.size(), 16u);  // 64 prompts / 8 per batch * 2 epochs
  for (std::size_t i = 0; i < res.metrics.size(); ++i) {
    const auto& m = res.metrics[i];
    EXPECT_EQ(m.step, static_cast<long>(i));
    EXPECT_GE(m.reward_mean, 0.0);
    EXPECT_LE(m.reward_mean, 1.0);
    EXPECT_GE(m.response_length_mean, 1.0);
    EXPECT_LE(m.response_length_mean, 9.0);
    EXPECT_EQ(m.malformed_rate, 0.0);
    EXPECT_FALSE(m.rac.has_value());
  }
  const std::string csv = metrics_to_csv(res.metrics);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
}

TEST(Run, RotationResponseLengthIsOne) {
  const auto res = run(small_run(1), rotation_set(16, 1));
  for (const auto& m : res.metrics) EXPECT_EQ(m.response_length_mean, 1.0);
}

TEST(Run, ZeroLearningRateTrajectoryIsFlat) {
  auto cfg = small_run(9);
  cfg.train.learning_rate = 0.0;
  cfg.train.batch_size = 16;
  cfg.epochs = 20;
  const auto initial = init_policies(rotation_set(160, 9));
  const auto res = run(cfg, rotation_set(160, 9));
  ASSERT_EQ(res.metrics.size(), 200u);
  EXPECT_EQ(res.state.policies, initial);
  std::vector<double> head, tail;
  for (int i = 0; i < 100; ++i) head.push_back(res.metrics[i].reward_mean);
  for (int i = 100; i < 200; ++i) tail.push_back(res.metrics[i].reward_mean);
  const double se = std::sqrt(variance(head) / 100 + variance(tail) / 100);
  EXPECT_LT(std::abs(mean(head) - mean(tail)), 3 * se);
}

TEST(Run, MaxStepsCapsTraining) {
  auto cfg = small_run(1);
  cfg.max_steps = 3;
  EXPECT_EQ(run(cfg, mixed_set(5)).metrics.size(), 3u);
}

TEST(Run, LearnsRotation) {
  auto cfg = small_run(3);
  cfg.train.batch_size = 16;
  cfg.epochs = 6;
  const auto train = rotation_set(400, 3);
  const auto res = run(cfg, train);
  const auto held_out = generate_dataset({{PuzzleKind::Rotation, 200, std::nullopt}}, 1234, synthetic_source(1234));
  EXPECT_GT(evaluate(res.state.policies, held_out).at("rotation").greedy_reward, 0.6);
}

TEST(Run, ResumeReproducesUninterruptedRun) {
  for (bool care : {false, true}) {
    const fs::path dir = temp_dir(care ? "resume_care" : "resume");
    const auto data = mixed_set(6);
    auto cfg = small_run(2);
    if (care) {
      cfg.train.care = CareConfig{};
      cfg.train.care->ema_update_interval_steps = 2;
    }
    cfg.checkpoint_dir = dir.string();
    cfg.checkpoint_every = 5;
    const auto full = run(cfg, data);
    ASSERT_TRUE(fs::exists(dir / "step-000005.ckpt"));
    ASSERT_TRUE(fs::exists(dir / "final.ckpt"));
    EXPECT_EQ(fs::exists(dir / "step-000005.ref.ckpt"), care);

    auto resumed_cfg = cfg;
    resumed_cfg.checkpoint_dir = (dir / "again").string();
    const auto resumed = run(resumed_cfg, data, load_run_state((dir / "step-000005.ckpt").string()));
    ASSERT_EQ(resumed.metrics.size(), full.metrics.size() - 5);
    const std::vector<StepMetrics> tail(full.metrics.begin() + 5, full.metrics.end());
    EXPECT_EQ(metrics_to_csv(resumed.metrics), metrics_to_csv(tail));
    EXPECT_EQ(resumed.state.policies, full.state.policies);
    EXPECT_EQ(resumed.state.reference, full.state.reference);
    fs::remove_all(dir);
  }
}

TEST(Run, CareModeShapesRewardsWithinBounds) {
  auto cfg = small_run(4);
  cfg.train.care = CareConfig{};
  cfg.train.care->ema_update_interval_steps = 1;
  const auto res = run(cfg, mixed_set(7));
  ASSERT_TRUE(res.state.reference.has_value());
  EXPECT_NE(*res.state.reference, init_policies(mixed_set(7)));
  for (const auto& m : res.metrics) {
    EXPECT_GE(m.reward_mean, 0.0);
    EXPECT_LE(m.reward_mean, 1.5);
  }
}

TEST(Run, RecordsSampledRationales) {
  auto cfg = small_run(8);
  cfg.rac_sample_rate = 1.0;
  cfg.epochs = 1;
  const auto res = run(cfg, rotation_set(16, 2));
  EXPECT_EQ(res.records.size(), 16u * 8u);
  for (const auto& m : res.metrics) EXPECT_EQ(m.rac, 1.0);
  for (const auto& r : res.records) EXPECT_EQ(rac::judge_heuristic(r).consistent, 1);
}

TEST(Run, WritesOutputFiles) {
  const fs::path dir = temp_dir("outputs");
  const auto data = rotation_set(16, 2);
  save_dataset((dir / "data.jsonl").string(), data);
  auto cfg = small_run(3);
  cfg.dataset_path = (dir / "data.jsonl").string();
  cfg.metrics_path = (dir / "out" / "metrics.csv").string();
  cfg.records_path = (dir / "out" / "records.jsonl").string();
  cfg.rac_sample_rate = 0.25;
  const auto res = run(cfg);
  EXPECT_EQ(read_file(cfg.metrics_path), metrics_to_csv(res.metrics));
  EXPECT_EQ(rac::records_from_jsonl(read_file(cfg.records_path)), res.records);
  fs::remove_all(dir);
}

TEST(Eval, UntrainedRotationNearChance) {
  const auto data = rotation_set(1000, 21);
  const auto res = evaluate(init_policies(data), data);
  ASSERT_EQ(res.at("rotation").items, 1000u);
  EXPECT_NEAR(res.at("rotation").sampled_reward, 0.25, 0.02);
}

TEST(Eval, MissingSchemaIsRejected) {
  const auto rot = rotation_set(4, 1);
  const auto mix = mixed_set(1);
  EXPECT_THROW(evaluate(init_policies(rot), mix), SchemaMismatch);
  EXPECT_THROW(run(small_run(1), mix, RunState{init_policies(rot), std::nullopt, 0}), SchemaMismatch);
}

}  // namespace
}  // namespace pcgrpo
