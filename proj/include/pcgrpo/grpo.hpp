#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcgrpo/checkpoint.hpp"
#include "pcgrpo/curriculum.hpp"
#include "pcgrpo/error.hpp"
#include "pcgrpo/numeric.hpp"
#include "pcgrpo/policy.hpp"

namespace pcgrpo {

/// Consistency-bonus hook settings. The bonus rule implemented in
/// care_shaped_rewards is a reference-likelihood approximation, not the
/// full GRPO-CARE algorithm.
struct CareConfig {
  double ema_decay = 0.995;
  int ema_update_interval_steps = 10;
  double bonus_coefficient = 0.5;
  double confidence_upper_bound = 0.95;
  double consistency_margin = 0.01;
  double care_epsilon = 0.0;

  void validate() const {
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ValidationError("care: ema_decay must be in (0, 1)");
    if (!(confidence_upper_bound > 0.0 && confidence_upper_bound <= 1.0))
      throw ValidationError("care: confidence_upper_bound must be in (0, 1]");
    if (ema_update_interval_steps < 1) throw ValidationError("care: ema_update_interval_steps must be >= 1");
    if (bonus_coefficient < 0.0) throw ValidationError("care: bonus_coefficient must be >= 0");
    if (!(care_epsilon >= 0.0 && care_epsilon < 1.0)) throw ValidationError("care: care_epsilon must be in [0, 1)");
  }
};

/// Optimisation hyperparameters. The learning-rate default is the one used
/// for 7B models; desk-scale runs override it (see RunConfig).
struct TrainConfig {
  int G = 8;
  double epsilon = 0.2;
  double beta_kl = 0.0;
  double learning_rate = 5e-7;
  double temperature = 0.9;
  int batch_size = 16;
  int iterations_per_update = 1;
  double sigma = 1.8;
  bool curriculum = true;
  std::optional<CareConfig> care;

  void validate() const {
    if (G < 2) throw ValidationError("grpo: G must be >= 2");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("grpo: epsilon must be in [0, 1)");
    if (beta_kl != 0.0) throw ValidationError("grpo: KL-regularised objective is not supported (beta_kl must be 0)");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("grpo: learning_rate must be finite and >= 0");
    if (!(temperature > 0.0)) throw ValidationError("grpo: temperature must be positive");
    if (batch_size < 1) throw ValidationError("grpo: batch_size must be >= 1");
    if (iterations_per_update < 1) throw ValidationError("grpo: iterations_per_update must be >= 1");
    if (!(sigma > 0.0)) throw ValidationError("curriculum: sigma must be positive");
    if (care) care->validate();
  }

  /// Clipping range actually used; the consistency-bonus mode runs with its
  /// own epsilon.
  double clip_epsilon() const { return care ? care->care_epsilon : epsilon; }

  curriculum::CurriculumConfig curriculum_config() const { return {sigma, curriculum}; }
};

/// One prompt's rollouts with everything the surrogate needs.
struct Group {
  std::string prompt_id;
  ContextFeatures context{};
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;
  curriculum::DifficultyStat difficulty;
  double weight = 0.0;
};

/// A_i = r_i - mean(r), with the residual sum redistributed so the
/// advantages cancel to within rounding; exactly zero for uniform rewards.
inline std::vector<double> advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ValidationError("advantages: group needs G >= 2");
  std::vector<double> a(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; }))
    return a;
  const double m = mean(rewards);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rewards[i] - m;
  const double residual = pairwise_sum(a) / static_cast<double>(a.size());
  for (double& x : a) x -= residual;
  return a;
}

/// Fills difficulty, weight, and advantages. Difficulty always comes from
/// the raw verifier rewards; `shaped_rewards`, when given, drive the
/// advantages.
inline Group make_group(std::string prompt_id, const PuzzleInstance& inst, const ContextFeatures& ctx,
                        std::vector<Rollout> rollouts, const TrainConfig& cfg,
                        std::optional<std::vector<double>> shaped_rewards = std::nullopt) {
  Group g;
  g.prompt_id = std::move(prompt_id);
  g.context = ctx;
  g.rollouts = std::move(rollouts);
  std::vector<double> raw;
  raw.reserve(g.rollouts.size());
  for (const auto& r : g.rollouts) raw.push_back(r.reward);
  if (inst.kind() == PuzzleKind::Jigsaw) {
    std::vector<std::vector<Token>> answers;
    for (const auto& r : g.rollouts) answers.push_back(r.malformed ? std::vector<Token>{-1} : r.tokens);
    g.difficulty = curriculum::difficulty_jigsaw(answers);
  } else {
    g.difficulty = curriculum::difficulty_binary(raw);
  }
  g.weight = curriculum::weight(g.difficulty.d, cfg.curriculum_config());
  g.rewards = shaped_rewards ? std::move(*shaped_rewards) : raw;
  if (g.rewards.size() != g.rollouts.size())
    throw ValidationError("group: reward count does not match rollout count");
  g.advantages = advantages(g.rewards);
  return g;
}

struct SurrogateResult {
  double value = 0.0;
  PolicyParams gradient;
};

/// Token-level clipped surrogate of one group and its analytic gradient:
///   value = w/G * sum_i 1/|o_i| * sum_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
/// A token contributes rho A_i grad log pi unless it sits on the clipped,
/// flat side (A > 0 and rho > 1+eps, or A < 0 and rho < 1-eps). The
/// boundary rho = 1 +/- eps counts as unclipped.
inline SurrogateResult surrogate_and_grad(const Group& group, const PolicyParams& params,
                                          const TrainConfig& cfg) {
  SurrogateResult out{0.0, PolicyParams(params.schema())};
  const std::size_t G = group.rollouts.size();
  if (G != group.advantages.size()) throw ValidationError("surrogate: advantages/rollouts mismatch");
  if (group.weight == 0.0 || G == 0) return out;
  const double eps = cfg.clip_epsilon();
  std::vector<double> per_rollout(G, 0.0);
  for (std::size_t i = 0; i < G; ++i) {
    const Rollout& r = group.rollouts[i];
    if (r.tokens.size() != r.old_logprobs.size())
      throw ValidationError("surrogate: token/old_logprob length mismatch");
    if (r.tokens.empty()) continue;
    const double A = group.advantages[i];
    const auto new_lp = token_logprobs(params, group.context, r.tokens);
    const double scale = group.weight / (static_cast<double>(G) * static_cast<double>(r.tokens.size()));
    std::vector<double> coeffs(r.tokens.size(), 0.0);
    std::vector<double> terms(r.tokens.size(), 0.0);
    bool any = false;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const double rho = std::exp(new_lp[t] - r.old_logprobs[t]);
      const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
      terms[t] = std::min(rho * A, clipped * A);
      const bool flat = (A > 0.0 && rho > 1.0 + eps) || (A < 0.0 && rho < 1.0 - eps);
      if (!flat && A != 0.0) {
        coeffs[t] = scale * rho * A;
        any = true;
      }
    }
    per_rollout[i] = scale * pairwise_sum(terms);
    if (any) accumulate_logprob_grad(params, group.context, r.tokens, coeffs, &out.gradient);
  }
  out.value = pairwise_sum(per_rollout);
  return out;
}

inline double surrogate_value(const Group& group, const PolicyParams& params, const TrainConfig& cfg) {
  return surrogate_and_grad(group, params, cfg).value;
}

/// Elementwise pairwise sum of equally shaped gradients in the given order.
inline PolicyParams pairwise_accumulate(std::span<const PolicyParams* const> parts) {
  if (parts.empty()) throw ValidationError("pairwise_accumulate: nothing to sum");
  if (parts.size() == 1) return *parts[0];
  const std::size_t half = parts.size() / 2;
  PolicyParams left = pairwise_accumulate(parts.first(half));
  const PolicyParams right = pairwise_accumulate(parts.subspan(half));
  left.axpy(1.0, right);
  return left;
}

/// theta <- theta + lr * (1/|batch|) * sum_groups grad. Plain gradient ascent.
inline PolicyParams update_step(const PolicyParams& params, std::span<const Group> batch,
                                const TrainConfig& cfg) {
  if (batch.empty()) return params;
  std::vector<PolicyParams> grads;
  grads.reserve(batch.size());
  for (const auto& g : batch) grads.push_back(surrogate_and_grad(g, params, cfg).gradient);
  std::vector<const PolicyParams*> ptrs;
  for (const auto& g : grads) ptrs.push_back(&g);
  const PolicyParams total = pairwise_accumulate(ptrs);
  if (!all_finite(total.values()))
    throw NumericalError("update_step: non-finite gradient for schema " + params.schema().key);
  PolicyParams next = params;
  next.axpy(cfg.learning_rate / static_cast<double>(batch.size()), total);
  return next;
}

/// Sequence probability of the rollout's answer under the reference policy.
inline double sequence_probability(const PolicyParams& ref, const ContextFeatures& ctx,
                                   std::span<const Token> tokens) {
  const auto lp = token_logprobs(ref, ctx, tokens);
  return std::exp(pairwise_sum(lp));
}

/// r'_i = r_i + bonus * [min(p_ref_i, cap) >= mean_j min(p_ref_j, cap) + margin],
/// clamped to [0, 1 + bonus].
inline std::vector<double> care_shaped_rewards(const Group& group, const PolicyParams* ref,
                                               const CareConfig& cfg) {
  if (!ref) throw ValidationError("care: missing reference snapshot");
  const std::size_t G = group.rollouts.size();
  std::vector<double> capped(G);
  for (std::size_t i = 0; i < G; ++i)
    capped[i] = std::min(sequence_probability(*ref, group.context, group.rollouts[i].tokens),
                         cfg.confidence_upper_bound);
  const double m = mean(capped);
  std::vector<double> out(G);
  for (std::size_t i = 0; i < G; ++i) {
    const double base = group.rewards.size() == G ? group.rewards[i] : group.rollouts[i].reward;
    const double bonus = capped[i] >= m + cfg.consistency_margin ? cfg.bonus_coefficient : 0.0;
    out[i] = std::clamp(base + bonus, 0.0, 1.0 + cfg.bonus_coefficient);
  }
  return out;
}

inline PolicyParams ema_update(const PolicyParams& ref, const PolicyParams& current, double decay) {
  ref.check_same_shape(current);
  PolicyParams out = ref;
  auto o = out.values();
  const auto c = current.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = decay * o[i] + (1.0 - decay) * c[i];
  return out;
}

}  // namespace pcgrpo
