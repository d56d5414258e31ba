#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcgrpo/error.hpp"
#include "pcgrpo/features.hpp"
#include "pcgrpo/puzzle.hpp"
#include "pcgrpo/rng.hpp"

namespace pcgrpo {

/// Answer layout a policy is built for. Permutation schemas (Jigsaw) decode
/// under the valid-permutation constraint: a position already assigned to
/// an earlier slot gets probability zero.
struct PolicySchema {
  std::string key;
  int slots = 1;
  int vocab = 2;
  bool permutation = false;
  int features = kFeatureDim;

  friend bool operator==(const PolicySchema&, const PolicySchema&) = default;
};

inline PolicySchema schema_for(const PuzzleParams& p) {
  return {schema_key(p), answer_slots(p), vocab_size(p), p.kind == PuzzleKind::Jigsaw,
          kFeatureDim};
}
inline PolicySchema schema_for(const PuzzleInstance& inst) { return schema_for(inst.params()); }

/// Slot-wise softmax policy parameters in one flat buffer:
/// for each slot s, W_s (vocab x features, row-major) then b_s (vocab);
/// finally the shared prefix-coupling matrix U (vocab x vocab, row-major,
/// column = previous token).
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicySchema schema) : schema_(std::move(schema)) {
    if (schema_.slots < 1 || schema_.vocab < 1 || schema_.features < 1)
      throw ValidationError("policy: schema dimensions must be positive");
    values_.assign(size_for(schema_), 0.0);
  }
  PolicyParams(PolicySchema schema, std::vector<double> values)
      : schema_(std::move(schema)), values_(std::move(values)) {
    if (values_.size() != size_for(schema_))
      throw SchemaMismatch("policy: value count does not match schema");
  }

  static std::size_t size_for(const PolicySchema& s) {
    const std::size_t v = s.vocab, f = s.features;
    return s.slots * (v * f + v) + v * v;
  }

  const PolicySchema& schema() const { return schema_; }
  int slots() const { return schema_.slots; }
  int vocab() const { return schema_.vocab; }
  int features() const { return schema_.features; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> weights(int slot) { return {values_.data() + slot_offset(slot), weight_len()}; }
  std::span<const double> weights(int slot) const {
    return {values_.data() + slot_offset(slot), weight_len()};
  }
  std::span<double> bias(int slot) {
    return {values_.data() + slot_offset(slot) + weight_len(), static_cast<std::size_t>(vocab())};
  }
  std::span<const double> bias(int slot) const {
    return {values_.data() + slot_offset(slot) + weight_len(), static_cast<std::size_t>(vocab())};
  }
  std::span<double> coupling() { return {values_.data() + coupling_offset(), coupling_len()}; }
  std::span<const double> coupling() const {
    return {values_.data() + coupling_offset(), coupling_len()};
  }

  /// this += scale * other
  void axpy(double scale, const PolicyParams& other) {
    check_same_shape(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  }

  void check_same_shape(const PolicyParams& other) const {
    if (schema_ != other.schema_) throw SchemaMismatch("policy: shape mismatch");
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t weight_len() const {
    return static_cast<std::size_t>(vocab()) * static_cast<std::size_t>(features());
  }
  std::size_t slot_offset(int slot) const { return slot * (weight_len() + vocab()); }
  std::size_t coupling_offset() const { return slots() * (weight_len() + vocab()); }
  std::size_t coupling_len() const { return static_cast<std::size_t>(vocab()) * vocab(); }

  PolicySchema schema_;
  std::vector<double> values_;
};

/// Unnormalised slot logits W_s ctx + b_s + U[:, prev].
inline std::vector<double> slot_logits(const PolicyParams& params, std::span<const double> ctx,
                                       int slot, std::optional<Token> prev_token) {
  if (slot < 0 || slot >= params.slots()) throw ValidationError("policy: slot out of range");
  if (static_cast<int>(ctx.size()) != params.features())
    throw SchemaMismatch("policy: context dimension mismatch");
  const int v = params.vocab(), f = params.features();
  std::vector<double> z(params.bias(slot).begin(), params.bias(slot).end());
  const auto w = params.weights(slot);
  for (int k = 0; k < v; ++k) {
    double s = 0.0;
    const double* row = w.data() + static_cast<std::size_t>(k) * f;
    for (int j = 0; j < f; ++j) s += row[j] * ctx[j];
    z[k] += s;
  }
  if (!prev_token.has_value()) return z;
  const Token prev = *prev_token;
  if (prev < 0 || prev >= v) throw ValidationError("policy: bad previous token");
  const auto u = params.coupling();
  for (int k = 0; k < v; ++k) z[k] += u[static_cast<std::size_t>(k) * v + static_cast<std::size_t>(prev)];
  return z;
}

/// Softmax of logits / temperature; entries where `excluded` is true get
/// exactly zero probability.
inline std::vector<double> softmax(std::span<const double> logits, double temperature,
                                   std::span<const bool> excluded = {}) {
  if (!(temperature > 0.0)) throw ValidationError("policy: temperature must be positive");
  const std::size_t v = logits.size();
  auto is_out = [&](std::size_t k) { return !excluded.empty() && excluded[k]; };
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < v; ++k)
    if (!is_out(k)) hi = std::max(hi, logits[k] / temperature);
  if (!std::isfinite(hi)) throw ValidationError("policy: no admissible token");
  std::vector<double> p(v, 0.0);
  double z = 0.0;
  for (std::size_t k = 0; k < v; ++k)
    if (!is_out(k)) z += (p[k] = std::exp(logits[k] / temperature - hi));
  for (double& x : p) x /= z;
  return p;
}

/// Log-softmax at temperature 1 of one entry (numerically stable).
inline double log_softmax_at(std::span<const double> logits, std::size_t index,
                             std::span<const bool> excluded = {}) {
  auto is_out = [&](std::size_t k) { return !excluded.empty() && excluded[k]; };
  if (is_out(index)) return -std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (!is_out(k)) hi = std::max(hi, logits[k]);
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (!is_out(k)) z += std::exp(logits[k] - hi);
  return logits[index] - hi - std::log(z);
}

inline std::vector<double> token_distribution(const PolicyParams& params,
                                              std::span<const double> ctx, int slot,
                                              std::optional<Token> prev_token,
                                              double temperature,
                                              std::span<const bool> excluded = {}) {
  const auto z = slot_logits(params, ctx, slot, prev_token);
  return softmax(z, temperature, excluded);
}

struct Rollout {
  std::vector<Token> tokens;
  std::vector<double> old_logprobs;
  double reward = 0.0;
  bool malformed = false;
  std::string rationale;
};

inline std::string answer_text(std::span<const Token> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

namespace detail {

inline Token draw(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  Token last = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    acc += probs[k];
    last = static_cast<Token>(k);
    if (u < acc) return last;
  }
  return last;
}

/// Shared slot walk for sampling, greedy decoding, and scoring. `choose`
/// picks the token at each slot given the temperature-1 logits.
template <typename Choose>
std::vector<Token> walk_slots(const PolicyParams& params, std::span<const double> ctx,
                              std::vector<double>* logprobs, Choose choose) {
  std::vector<Token> tokens;
  std::vector<bool> used(params.vocab(), false);
  for (int s = 0; s < params.slots(); ++s) {
    std::optional<Token> prev;
    if (s) prev = tokens.back();
    const auto z = slot_logits(params, ctx, s, prev);
    std::unique_ptr<bool[]> mask;
    std::span<const bool> excluded;
    if (params.schema().permutation) {
      mask = std::make_unique<bool[]>(params.vocab());
      for (int k = 0; k < params.vocab(); ++k) mask[k] = used[k];
      excluded = {mask.get(), static_cast<std::size_t>(params.vocab())};
    }
    const Token t = choose(s, std::span<const double>(z), excluded);
    if (logprobs) logprobs->push_back(log_softmax_at(z, t, excluded));
    tokens.push_back(t);
    used[t] = true;
  }
  return tokens;
}

}  // namespace detail

/// Textual rationale whose closing line restates the sampled answer.
inline std::string emit_rationale(const PolicyParams& params, std::span<const double> ctx,
                                  std::span<const Token> tokens) {
  std::ostringstream os;
  os.precision(3);
  std::vector<bool> used(params.vocab(), false);
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    std::optional<Token> prev;
    if (s) prev = tokens[s - 1];
    std::unique_ptr<bool[]> mask;
    std::span<const bool> excluded;
    if (params.schema().permutation) {
      mask = std::make_unique<bool[]>(params.vocab());
      for (int k = 0; k < params.vocab(); ++k) mask[k] = used[k];
      excluded = {mask.get(), static_cast<std::size_t>(params.vocab())};
    }
    const auto p = token_distribution(params, ctx, static_cast<int>(s), prev, 1.0, excluded);
    os << "slot " << s << ": choose " << tokens[s] << " (p=" << p[tokens[s]] << ")\n";
    used[tokens[s]] = true;
  }
  os << "conclusion: " << answer_text(tokens);
  return os.str();
}

/// Samples slot by slot at `temperature`; old_logprobs are recorded at
/// temperature 1 so importance ratios equal 1 at the sampling parameters.
inline Rollout sample_rollout(const PolicyParams& params, const PuzzleInstance& inst,
                              const ContextFeatures& ctx, double temperature, Rng& rng,
                              bool with_rationale = false) {
  if (!(temperature > 0.0)) throw ValidationError("policy: temperature must be positive");
  if (schema_for(inst) != params.schema())
    throw SchemaMismatch("policy schema " + params.schema().key + " does not fit puzzle " +
                         schema_key(inst.params()));
  Rollout r;
  r.tokens = detail::walk_slots(params, ctx, &r.old_logprobs,
                                [&](int, std::span<const double> z, std::span<const bool> ex) {
                                  return detail::draw(softmax(z, temperature, ex), rng);
                                });
  try {
    r.reward = reward(inst, r.tokens);
  } catch (const MalformedAnswer&) {
    r.reward = 0.0;
    r.malformed = true;
  }
  if (with_rationale) r.rationale = emit_rationale(params, ctx, r.tokens);
  return r;
}

inline Rollout sample_rollout(const PolicyParams& params, const PuzzleInstance& inst,
                              double temperature, Rng& rng) {
  return sample_rollout(params, inst, encode_context(inst), temperature, rng);
}

/// Highest-probability token at every slot (ties -> lowest index).
inline std::vector<Token> greedy_decode(const PolicyParams& params, std::span<const double> ctx) {
  return detail::walk_slots(params, ctx, nullptr,
                            [](int, std::span<const double> z, std::span<const bool> ex) {
                              Token best = -1;
                              for (std::size_t k = 0; k < z.size(); ++k) {
                                if (!ex.empty() && ex[k]) continue;
                                if (best < 0 || z[k] > z[best]) best = static_cast<Token>(k);
                              }
                              return best;
                            });
}

/// Temperature-1 per-token log-probabilities of a given answer.
inline std::vector<double> token_logprobs(const PolicyParams& params, std::span<const double> ctx,
                                          std::span<const Token> tokens);

/// Adds the gradient of sum_t coeffs[t] * log pi(tokens[t] | ctx, tokens[<t])
/// into `grad` and returns the per-token log-probabilities. The softmax
/// gradient per slot is (onehot - p) outer ctx, restricted to admissible
/// tokens for permutation schemas.
inline std::vector<double> accumulate_logprob_grad(const PolicyParams& params,
                                                   std::span<const double> ctx,
                                                   std::span<const Token> tokens,
                                                   std::span<const double> coeffs,
                                                   PolicyParams* grad) {
  if (grad) params.check_same_shape(*grad);
  if (static_cast<int>(tokens.size()) != params.slots())
    throw SchemaMismatch("policy: token count does not match schema slots");
  if (!coeffs.empty() && coeffs.size() != tokens.size())
    throw ValidationError("policy: one coefficient per token required");
  const int v = params.vocab(), f = params.features();
  std::vector<double> logps;
  logps.reserve(tokens.size());
  std::vector<bool> used(v, false);
  auto mask = std::make_unique<bool[]>(v);
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const Token t = tokens[s];
    if (t < 0 || t >= v) throw SchemaMismatch("policy: token out of vocabulary");
    std::span<const bool> excluded;
    if (params.schema().permutation) {
      if (used[t]) throw SchemaMismatch("policy: repeated position under permutation schema");
      for (int k = 0; k < v; ++k) mask[k] = used[k];
      excluded = {mask.get(), static_cast<std::size_t>(v)};
    }
    std::optional<Token> prev;
    if (s) prev = tokens[s - 1];
    const auto z = slot_logits(params, ctx, static_cast<int>(s), prev);
    logps.push_back(log_softmax_at(z, t, excluded));
    used[t] = true;
    const double c = coeffs.empty() ? 0.0 : coeffs[s];
    if (!grad || c == 0.0) continue;
    const auto p = softmax(z, 1.0, excluded);
    auto w = grad->weights(static_cast<int>(s));
    auto b = grad->bias(static_cast<int>(s));
    auto u = grad->coupling();
    for (int k = 0; k < v; ++k) {
      const double g = c * ((k == t ? 1.0 : 0.0) - p[k]);
      if (g == 0.0) continue;
      double* row = w.data() + static_cast<std::size_t>(k) * f;
      for (int j = 0; j < f; ++j) row[j] += g * ctx[j];
      b[k] += g;
      if (prev) u[static_cast<std::size_t>(k) * v + *prev] += g;
    }
  }
  return logps;
}

inline std::vector<double> token_logprobs(const PolicyParams& params, std::span<const double> ctx,
                                          std::span<const Token> tokens) {
  return accumulate_logprob_grad(params, ctx, tokens, {}, nullptr);
}

struct LogprobGrad {
  std::vector<double> logprobs;
  PolicyParams gradient;
};

inline LogprobGrad logprob_and_grad(const PolicyParams& params, std::span<const double> ctx,
                                    std::span<const Token> tokens,
                                    std::span<const double> coeffs) {
  LogprobGrad out{{}, PolicyParams(params.schema())};
  out.logprobs = accumulate_logprob_grad(params, ctx, tokens, coeffs, &out.gradient);
  return out;
}

inline LogprobGrad logprob_and_grad(const PolicyParams& params, const PuzzleInstance& inst,
                                    std::span<const Token> tokens,
                                    std::span<const double> coeffs) {
  if (schema_for(inst) != params.schema()) throw SchemaMismatch("policy: schema mismatch");
  const auto ctx = encode_context(inst);
  return logprob_and_grad(params, ctx, tokens, coeffs);
}

}  // namespace pcgrpo
