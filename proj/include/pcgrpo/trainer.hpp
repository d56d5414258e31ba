#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcgrpo/checkpoint.hpp"
#include "pcgrpo/dataset.hpp"
#include "pcgrpo/grpo.hpp"
#include "pcgrpo/parallel.hpp"
#include "pcgrpo/rac.hpp"

namespace pcgrpo {

/// Learning rate used by desk-scale runs of the linear toy policy. The
/// large-model value stays the TrainConfig default (5e-7).
inline constexpr double kDeskLearningRate = 0.05;

inline TrainConfig desk_train_config() {
  TrainConfig t;
  t.learning_rate = kDeskLearningRate;
  return t;
}

struct RunConfig {
  TrainConfig train = desk_train_config();
  std::string dataset_path;
  /// kind name -> number of instances per epoch; empty uses the whole dataset.
  std::map<std::string, std::size_t> mix_ratios;
  int epochs = 1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_dir;
  std::string metrics_path;
  double rac_sample_rate = 0.0;
  std::string records_path;
  long max_steps = 0;  // 0 = no cap
  int threads = 0;
  std::string resume_from;
  std::string rac_prompt_template;

  void validate() const {
    train.validate();
    if (epochs < 0) throw ValidationError("run: epochs must be >= 0");
    if (checkpoint_every < 0) throw ValidationError("run: checkpoint_every must be >= 0");
    if (!(rac_sample_rate >= 0.0 && rac_sample_rate <= 1.0))
      throw ValidationError("run: rac_sample_rate must be in [0, 1]");
    if (max_steps < 0) throw ValidationError("run: max_steps must be >= 0");
    if (!mix_ratios.empty()) {
      std::size_t total = 0;
      for (const auto& [kind, n] : mix_ratios) {
        parse_kind(kind);
        total += n;
      }
      if (total == 0) throw ValidationError("run: mix_ratios needs at least one positive count");
    }
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

inline std::map<std::string, nlohmann::json> flatten_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  std::map<std::string, nlohmann::json> flat;
  for (const auto& [k, v] : j.items()) {
    if (v.is_object() && k != "mix_ratios") {
      for (const auto& [k2, v2] : v.items()) flat[k + "." + k2] = v2;
    } else {
      flat[k] = v;
    }
  }
  return flat;
}

}  // namespace detail

/// Accepts nested groups ({"grpo": {"G": 8}}) or dotted keys ("grpo.G").
/// Unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  auto flat = detail::flatten_config(j);
  bool care_enabled = false;
  CareConfig care;
  auto take = [&](const std::string& key, auto& dst) {
    auto it = flat.find(key);
    if (it == flat.end()) return;
    try {
      dst = it->second.get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config key " + key + ": " + e.what());
    }
    flat.erase(it);
  };
  take("dataset_path", c.dataset_path);
  take("mix_ratios", c.mix_ratios);
  take("epochs", c.epochs);
  take("seed", c.seed);
  take("checkpoint_every", c.checkpoint_every);
  take("checkpoint_dir", c.checkpoint_dir);
  take("metrics_path", c.metrics_path);
  take("rac_sample_rate", c.rac_sample_rate);
  take("records_path", c.records_path);
  take("max_steps", c.max_steps);
  take("threads", c.threads);
  take("resume_from", c.resume_from);
  take("rac.prompt_template", c.rac_prompt_template);
  take("grpo.G", c.train.G);
  take("grpo.epsilon", c.train.epsilon);
  take("grpo.beta_kl", c.train.beta_kl);
  take("grpo.learning_rate", c.train.learning_rate);
  take("grpo.temperature", c.train.temperature);
  take("grpo.batch_size", c.train.batch_size);
  take("grpo.iterations_per_update", c.train.iterations_per_update);
  take("curriculum.sigma", c.train.sigma);
  take("curriculum.enabled", c.train.curriculum);
  take("care.enabled", care_enabled);
  take("care.ema_decay", care.ema_decay);
  take("care.ema_update_interval_steps", care.ema_update_interval_steps);
  take("care.bonus_coefficient", care.bonus_coefficient);
  take("care.confidence_upper_bound", care.confidence_upper_bound);
  take("care.consistency_margin", care.consistency_margin);
  take("care.epsilon", care.care_epsilon);
  if (!flat.empty()) throw ValidationError("config: unknown key '" + flat.begin()->first + "'");
  if (care_enabled) c.train.care = care;
  c.validate();
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset_path"] = c.dataset_path;
  j["mix_ratios"] = c.mix_ratios;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["metrics_path"] = c.metrics_path;
  j["rac_sample_rate"] = c.rac_sample_rate;
  j["records_path"] = c.records_path;
  j["max_steps"] = c.max_steps;
  j["threads"] = c.threads;
  j["resume_from"] = c.resume_from;
  j["rac"] = {{"prompt_template", c.rac_prompt_template}};
  j["grpo"] = {{"G", c.train.G},
               {"epsilon", c.train.epsilon},
               {"beta_kl", c.train.beta_kl},
               {"learning_rate", c.train.learning_rate},
               {"temperature", c.train.temperature},
               {"batch_size", c.train.batch_size},
               {"iterations_per_update", c.train.iterations_per_update}};
  j["curriculum"] = {{"sigma", c.train.sigma}, {"enabled", c.train.curriculum}};
  const CareConfig care = c.train.care.value_or(CareConfig{});
  j["care"] = {{"enabled", c.train.care.has_value()},
               {"ema_decay", care.ema_decay},
               {"ema_update_interval_steps", care.ema_update_interval_steps},
               {"bonus_coefficient", care.bonus_coefficient},
               {"confidence_upper_bound", care.confidence_upper_bound},
               {"consistency_margin", care.consistency_margin},
               {"epsilon", care.care_epsilon}};
  return j;
}

// ---------------------------------------------------------------------------
// Metrics

struct StepMetrics {
  long step = 0;
  double reward_mean = 0.0;
  double reward_variance = 0.0;
  double response_length_mean = 0.0;
  double weight_mean = 0.0;
  std::optional<double> rac;
  double malformed_rate = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "step,reward_mean,reward_variance,response_length_mean,weight_mean,rac,malformed_rate";

namespace detail {
inline std::string fmt_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
}  // namespace detail

inline std::string metrics_to_csv(std::span<const StepMetrics> rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& m : rows) {
    out += std::to_string(m.step) + ',' + detail::fmt_real(m.reward_mean) + ',' +
           detail::fmt_real(m.reward_variance) + ',' + detail::fmt_real(m.response_length_mean) +
           ',' + detail::fmt_real(m.weight_mean) + ',' + (m.rac ? detail::fmt_real(*m.rac) : "") +
           ',' + detail::fmt_real(m.malformed_rate) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

/// Picks the requested number of instances of each kind (first ones in
/// dataset order), shuffles the multiset, and cuts it into batches; the
/// last batch may be short. Empty mix uses the whole dataset.
inline std::vector<std::vector<std::size_t>> make_batches(
    std::span<const PuzzleInstance> dataset, const std::map<std::string, std::size_t>& mix_ratios,
    int batch_size, Rng& rng) {
  if (batch_size < 1) throw ValidationError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> chosen;
  if (mix_ratios.empty()) {
    chosen.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) chosen[i] = i;
  } else {
    for (const auto& [name, want] : mix_ratios) {
      const PuzzleKind kind = parse_kind(name);
      std::size_t got = 0;
      for (std::size_t i = 0; i < dataset.size() && got < want; ++i)
        if (dataset[i].kind() == kind) {
          chosen.push_back(i);
          ++got;
        }
      if (got < want)
        throw ValidationError("make_batches: requested " + std::to_string(want) + " " + name +
                              " instances but dataset has " + std::to_string(got));
    }
  }
  rng.shuffle(std::span<std::size_t>(chosen));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < chosen.size(); i += batch_size)
    batches.emplace_back(chosen.begin() + i,
                         chosen.begin() + std::min(chosen.size(), i + static_cast<std::size_t>(batch_size)));
  return batches;
}

// ---------------------------------------------------------------------------
// Training loop

struct RunState {
  PolicySet policies;
  std::optional<PolicySet> reference;  // EMA snapshot, consistency-bonus mode only
  long step = 0;
};

struct RunResult {
  RunState state;
  std::vector<StepMetrics> metrics;
  std::vector<rac::RolloutRecord> records;
};

inline std::string puzzle_question(const PuzzleInstance& inst) {
  switch (inst.kind()) {
    case PuzzleKind::Jigsaw: {
      const auto& b = inst.as<JigsawInstance>();
      return "Jigsaw " + inst.id() + ": assign each of the " + std::to_string(b.rows * b.cols) +
             " tiles to its cell in a " + std::to_string(b.rows) + "x" + std::to_string(b.cols) + " grid.";
    }
    case PuzzleKind::Rotation:
      return "Rotation " + inst.id() + ": which counterclockwise quarter-turn count (0-3) was applied?";
    case PuzzleKind::PatchFit:
      return "PatchFit " + inst.id() + ": which of the " +
             std::to_string(inst.as<PatchFitInstance>().decoys + 1) + " candidates fills the mask?";
  }
  return {};
}

/// Zero-initialised policy for every schema present in the dataset.
inline PolicySet init_policies(std::span<const PuzzleInstance> dataset) {
  PolicySet set;
  for (const auto& inst : dataset) {
    const PolicySchema s = schema_for(inst);
    if (!set.count(s.key)) set.emplace(s.key, PolicyParams(s));
  }
  return set;
}

inline void check_covers(const PolicySet& set, std::span<const PuzzleInstance> dataset) {
  for (const auto& inst : dataset) {
    const PolicySchema s = schema_for(inst);
    auto it = set.find(s.key);
    if (it == set.end()) throw SchemaMismatch("checkpoint has no policy for schema " + s.key);
    if (it->second.schema() != s) throw SchemaMismatch("checkpoint schema differs for " + s.key);
  }
}

namespace detail {

inline std::string step_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06ld", step);
  return buf;
}

inline void write_checkpoint(const RunConfig& cfg, const RunState& state, const std::string& stem) {
  const std::filesystem::path dir(cfg.checkpoint_dir);
  const std::string base = (dir / stem).string();
  checkpoint::save(base + ".ckpt", state.policies);
  nlohmann::json side;
  side["run_config"] = run_config_to_json(cfg);
  side["step"] = state.step;
  side["reference"] = nullptr;
  if (state.reference) {
    checkpoint::save(base + ".ref.ckpt", *state.reference);
    side["reference"] = stem + ".ref.ckpt";
  }
  atomic_write(base + ".json", side.dump(2) + "\n");
}

}  // namespace detail

namespace detail {

/// Header plus the rows of an existing metrics file for steps before
/// `before`, so a resumed run extends the file instead of truncating it.
inline std::string prior_metrics(const std::string& path, long before) {
  std::string out(kMetricsHeader);
  out += '\n';
  if (!std::filesystem::exists(path)) return out;
  const auto lines = split_lines(read_file(path));
  if (lines.empty() || lines[0] != kMetricsHeader) return out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    char* end = nullptr;
    const long step = std::strtol(lines[i].c_str(), &end, 10);
    if (end == lines[i].c_str() || *end != ',')
      throw ValidationError(path + ": bad metrics row " + std::to_string(i + 1));
    if (step < before) out += lines[i] + '\n';
  }
  return out;
}

inline std::string prior_records(const std::string& path, long before) {
  if (!std::filesystem::exists(path)) return {};
  auto records = rac::records_from_jsonl(read_file(path));
  std::erase_if(records, [&](const rac::RolloutRecord& r) { return r.step >= before; });
  return rac::records_to_jsonl(records);
}

}  // namespace detail

/// Loads a checkpoint written by run(): the policies, the sidecar's step
/// counter, and the EMA reference when present.
inline RunState load_run_state(const std::string& ckpt_path) {
  RunState st;
  st.policies = checkpoint::load(ckpt_path);
  std::filesystem::path side(ckpt_path);
  side.replace_extension(".json");
  if (std::filesystem::exists(side)) {
    const auto j = nlohmann::json::parse(read_file(side.string()));
    st.step = j.value("step", 0L);
    if (j.contains("reference") && j["reference"].is_string())
      st.reference = checkpoint::load((side.parent_path() / j["reference"].get<std::string>()).string());
  }
  return st;
}

/// Curriculum-weighted GRPO training over an in-memory dataset. Steps are numbered from 0
/// across epochs; every random draw comes from a stream keyed by
/// (seed, epoch) or (seed, step, prompt id), so results do not depend on
/// thread count and a resumed run continues exactly where it stopped.
inline RunResult run(const RunConfig& cfg, const std::vector<PuzzleInstance>& dataset,
                     std::optional<RunState> resume = std::nullopt) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  RunResult result;
  RunState& st = result.state;
  if (resume) {
    st = std::move(*resume);
    check_covers(st.policies, dataset);
  } else {
    st.policies = init_policies(dataset);
  }
  if (tc.care && !st.reference) st.reference = st.policies;
  const long resumed_at = st.step;

  const int threads = cfg.threads;
  std::vector<ContextFeatures> contexts(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) { contexts[i] = encode_context(dataset[i]); });

  long step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), "epoch"));
    const auto batches = make_batches(dataset, cfg.mix_ratios, tc.batch_size, order_rng);
    for (const auto& batch : batches) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
      if (step < st.step) {
        ++step;
        continue;
      }
      const PolicySet old_policies = st.policies;
      const std::size_t B = batch.size();
      std::vector<Group> groups(B);
      std::vector<std::vector<rac::RolloutRecord>> records(B);
      std::vector<std::string> keys(B);
      parallel_for(B, threads, [&](std::size_t j) {
        const std::size_t idx = batch[j];
        const PuzzleInstance& inst = dataset[idx];
        keys[j] = schema_key(inst.params());
        const PolicyParams& pol = old_policies.at(keys[j]);
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), inst.id()));
        Rng rac_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), inst.id() + "#rac"));
        std::vector<Rollout> rollouts;
        rollouts.reserve(tc.G);
        for (int i = 0; i < tc.G; ++i) {
          const bool record = cfg.rac_sample_rate > 0.0 && rac_rng.bernoulli(cfg.rac_sample_rate);
          rollouts.push_back(sample_rollout(pol, inst, contexts[idx], tc.temperature, rng, record));
          if (record)
            records[j].push_back({inst.id() + "#" + std::to_string(step) + "." + std::to_string(i),
                                  puzzle_question(inst), rollouts.back().rationale,
                                  answer_text(rollouts.back().tokens), step});
        }
        Group g = make_group(inst.id(), inst, contexts[idx], std::move(rollouts), tc);
        if (tc.care) {
          g.rewards = care_shaped_rewards(g, &st.reference->at(keys[j]), *tc.care);
          g.advantages = advantages(g.rewards);
        }
        groups[j] = std::move(g);
      });

      StepMetrics m;
      m.step = step;
      std::vector<double> rewards, lengths, weights;
      std::size_t malformed = 0;
      for (const auto& g : groups) {
        weights.push_back(g.weight);
        for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
          rewards.push_back(g.rewards[i]);
          lengths.push_back(static_cast<double>(g.rollouts[i].tokens.size()));
          malformed += g.rollouts[i].malformed;
        }
      }
      m.reward_mean = mean(rewards);
      m.reward_variance = variance(rewards);
      m.response_length_mean = mean(lengths);
      m.weight_mean = mean(weights);
      m.malformed_rate = rewards.empty() ? 0.0 : static_cast<double>(malformed) / rewards.size();
      std::vector<double> verdicts;
      for (auto& recs : records)
        for (auto& r : recs) {
          verdicts.push_back(rac::judge_heuristic(r).consistent);
          result.records.push_back(std::move(r));
        }
      if (!verdicts.empty()) m.rac = mean(verdicts);
      result.metrics.push_back(m);

      for (int it = 0; it < tc.iterations_per_update; ++it) {
        std::vector<PolicyParams> grads(B);
        parallel_for(B, threads, [&](std::size_t j) {
          grads[j] = surrogate_and_grad(groups[j], st.policies.at(keys[j]), tc).gradient;
        });
        std::map<std::string, std::vector<const PolicyParams*>> by_schema;
        for (std::size_t j = 0; j < B; ++j) by_schema[keys[j]].push_back(&grads[j]);
        for (const auto& [key, parts] : by_schema) {
          const PolicyParams total = pairwise_accumulate(parts);
          if (!all_finite(total.values()))
            throw NumericalError("non-finite gradient at step " + std::to_string(step) +
                                 " for schema " + key);
          st.policies.at(key).axpy(tc.learning_rate / static_cast<double>(B), total);
        }
      }

      ++step;
      st.step = step;
      if (tc.care && step % tc.care->ema_update_interval_steps == 0)
        for (auto& [key, ref] : *st.reference)
          ref = ema_update(ref, st.policies.at(key), tc.care->ema_decay);
      if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && step % cfg.checkpoint_every == 0)
        detail::write_checkpoint(cfg, st, detail::step_name(step));
    }
  }
  if (!cfg.checkpoint_dir.empty()) detail::write_checkpoint(cfg, st, "final");
  if (!cfg.metrics_path.empty()) {
    std::string csv = metrics_to_csv(result.metrics);
    if (resumed_at > 0)
      csv = detail::prior_metrics(cfg.metrics_path, resumed_at) + csv.substr(kMetricsHeader.size() + 1);
    atomic_write(cfg.metrics_path, csv);
  }
  if (!cfg.records_path.empty()) {
    std::string jsonl = rac::records_to_jsonl(result.records);
    if (resumed_at > 0) jsonl = detail::prior_records(cfg.records_path, resumed_at) + jsonl;
    atomic_write(cfg.records_path, jsonl);
  }
  return result;
}

/// Loads the dataset (and optional resume checkpoint) named in the config.
inline RunResult run(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ValidationError("run: dataset_path is required");
  const auto dataset = load_dataset(cfg.dataset_path);
  std::optional<RunState> resume;
  if (!cfg.resume_from.empty()) resume = load_run_state(cfg.resume_from);
  return run(cfg, dataset, std::move(resume));
}

// ---------------------------------------------------------------------------
// Evaluation

struct KindEval {
  std::size_t items = 0;
  double greedy_reward = 0.0;   // argmax decoding
  double sampled_reward = 0.0;  // mean over samples at the eval temperature
};

/// Mean reward per puzzle kind. Read-only on the policies.
inline std::map<std::string, KindEval> evaluate(const PolicySet& policies,
                                                std::span<const PuzzleInstance> dataset,
                                                int samples = 8, std::uint64_t seed = 0,
                                                double temperature = 1.0) {
  check_covers(policies, dataset);
  std::map<std::string, std::vector<double>> greedy, sampled;
  for (const auto& inst : dataset) {
    const auto ctx = encode_context(inst);
    const PolicyParams& pol = policies.at(schema_key(inst.params()));
    const std::string kind(kind_name(inst.kind()));
    greedy[kind].push_back(reward(inst, greedy_decode(pol, ctx)));
    Rng rng(derive_seed(seed, 0, inst.id() + "#eval"));
    for (int s = 0; s < samples; ++s)
      sampled[kind].push_back(sample_rollout(pol, inst, ctx, temperature, rng).reward);
  }
  std::map<std::string, KindEval> out;
  for (const auto& [kind, g] : greedy)
    out[kind] = {g.size(), mean(g), sampled.count(kind) ? mean(sampled[kind]) : 0.0};
  return out;
}

}  // namespace pcgrpo
