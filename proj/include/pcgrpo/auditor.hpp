#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcgrpo/error.hpp"
#include "pcgrpo/io.hpp"

namespace pcgrpo::audit {

using OptionId = std::string;

/// One benchmark question with its label, committee answers, and
/// (optionally) the aggregated user-study label.
struct AuditItem {
  std::string item_id;
  OptionId benchmark_label;
  std::map<std::string, OptionId> model_answers;
  std::optional<OptionId> user_label;
  std::vector<OptionId> options;

  void validate() const {
    auto known = [&](const OptionId& o) { return std::find(options.begin(), options.end(), o) != options.end(); };
    if (!known(benchmark_label)) throw ValidationError("audit item " + item_id + ": benchmark label not an option");
    for (const auto& [model, ans] : model_answers)
      if (!known(ans)) throw ValidationError("audit item " + item_id + ": answer of " + model + " not an option");
    if (user_label && !known(*user_label))
      throw ValidationError("audit item " + item_id + ": user label not an option");
  }
};

struct CommitteeConfig {
  std::vector<std::string> members;  // sorted, unique
  int K = 1;

  void validate() const {
    if (members.empty()) throw ValidationError("committee: empty member set");
    if (K < 1 || K > static_cast<int>(members.size()))
      throw ValidationError("committee: K must satisfy 1 <= K <= |S|");
  }
  friend bool operator==(const CommitteeConfig&, const CommitteeConfig&) = default;
};

/// nullopt means no consensus; it never equals a benchmark label.
using CommitteeLabel = std::optional<OptionId>;

/// The option reaching at least K votes among the members; with several
/// such options the plurality one, and a plurality tie is no consensus.
inline CommitteeLabel committee_label(const AuditItem& item, const CommitteeConfig& cfg) {
  cfg.validate();
  std::map<OptionId, int> votes;
  for (const auto& m : cfg.members) {
    auto it = item.model_answers.find(m);
    if (it == item.model_answers.end())
      throw ValidationError("audit item " + item.item_id + ": missing answer from " + m);
    ++votes[it->second];
  }
  int best = 0, runner_up = 0;
  const OptionId* winner = nullptr;
  for (const auto& [opt, n] : votes) {
    if (n > best) {
      runner_up = best;
      best = n;
      winner = &opt;
    } else if (n > runner_up) {
      runner_up = n;
    }
  }
  if (best < cfg.K || runner_up == best) return std::nullopt;
  return *winner;
}

inline std::vector<CommitteeLabel> committee_labels(std::span<const AuditItem> items,
                                                    const CommitteeConfig& cfg) {
  std::vector<CommitteeLabel> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(committee_label(it, cfg));
  return out;
}

namespace detail {
inline const OptionId& user_label_of(const AuditItem& it) {
  if (!it.user_label) throw ValidationError("audit item " + it.item_id + ": user label required");
  return *it.user_label;
}
inline bool agrees(const CommitteeLabel& j, const OptionId& g) { return j && *j == g; }
}  // namespace detail

/// |{J = G = U}| / |{J = G}|, undefined on an empty denominator.
inline std::optional<double> precision(std::span<const AuditItem> items,
                                       std::span<const CommitteeLabel> labels) {
  if (items.size() != labels.size()) throw ValidationError("precision: label count mismatch");
  std::size_t num = 0, den = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& u = detail::user_label_of(items[i]);
    if (!detail::agrees(labels[i], items[i].benchmark_label)) continue;
    ++den;
    num += u == items[i].benchmark_label;
  }
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

/// |{J != G and U = G}| / |{J != G}|, undefined on an empty denominator.
inline std::optional<double> for_rate(std::span<const AuditItem> items,
                                      std::span<const CommitteeLabel> labels) {
  if (items.size() != labels.size()) throw ValidationError("for_rate: label count mismatch");
  std::size_t num = 0, den = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& u = detail::user_label_of(items[i]);
    if (detail::agrees(labels[i], items[i].benchmark_label)) continue;
    ++den;
    num += u == items[i].benchmark_label;
  }
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline constexpr double kDefaultLambda = 0.3;

/// precision + lambda (1 - FOR); undefined precision -> -inf, undefined
/// FOR -> 0.
inline double objective(std::optional<double> prec, std::optional<double> forr, double lambda) {
  if (!prec) return -std::numeric_limits<double>::infinity();
  return *prec + lambda * (1.0 - forr.value_or(0.0));
}

struct AuditOutcome {
  std::optional<double> precision;
  std::optional<double> for_rate;
  double objective = 0.0;
  std::vector<CommitteeLabel> labels;
};

inline AuditOutcome evaluate(std::span<const AuditItem> items, const CommitteeConfig& cfg,
                             double lambda = kDefaultLambda) {
  AuditOutcome out;
  out.labels = committee_labels(items, cfg);
  out.precision = precision(items, out.labels);
  out.for_rate = for_rate(items, out.labels);
  out.objective = objective(out.precision, out.for_rate, lambda);
  return out;
}

/// Deterministic preference between two configurations with equal objective
/// (within 1e-12): smaller committee, then larger K, then member names.
inline bool preferred_on_tie(const CommitteeConfig& a, const CommitteeConfig& b) {
  if (a.members.size() != b.members.size()) return a.members.size() < b.members.size();
  if (a.K != b.K) return a.K > b.K;
  return a.members < b.members;
}

inline constexpr double kObjectiveTieTolerance = 1e-12;
inline constexpr std::size_t kMaxPool = 12;

struct OptimizeResult {
  CommitteeConfig config;
  AuditOutcome outcome;
  std::size_t configurations_visited = 0;
};

/// Exhaustive argmax of the auditing objective over every nonempty subset
/// of the pool and every threshold. Per subset, each item's vote histogram
/// is reduced once to (plurality option, its count, uniqueness); all K are
/// then scored from those summaries.
inline OptimizeResult optimize(std::vector<std::string> pool, std::span<const AuditItem> items,
                               double lambda = kDefaultLambda) {
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (pool.empty()) throw ValidationError("optimize: empty model pool");
  if (pool.size() > kMaxPool) throw ValidationError("optimize: pool larger than 12 models");
  const std::size_t m = pool.size();
  const std::size_t n = items.size();

  // answers[i][k]: option index of model k on item i; bench/user likewise.
  std::vector<std::vector<int>> answers(n, std::vector<int>(m));
  std::vector<int> bench(n), user(n), n_opts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& it = items[i];
    it.validate();
    auto idx = [&](const OptionId& o) {
      return static_cast<int>(std::find(it.options.begin(), it.options.end(), o) - it.options.begin());
    };
    n_opts[i] = static_cast<int>(it.options.size());
    bench[i] = idx(it.benchmark_label);
    user[i] = idx(detail::user_label_of(it));
    for (std::size_t k = 0; k < m; ++k) {
      auto a = it.model_answers.find(pool[k]);
      if (a == it.model_answers.end())
        throw ValidationError("audit item " + it.item_id + ": missing answer from " + pool[k]);
      answers[i][k] = idx(a->second);
    }
  }

  OptimizeResult best;
  bool have_best = false;
  double best_obj = -std::numeric_limits<double>::infinity();
  std::vector<int> top(n), top_count(n);
  std::vector<char> unique(n);
  std::vector<int> votes;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    const int size = std::popcount(mask);
    for (std::size_t i = 0; i < n; ++i) {
      votes.assign(n_opts[i], 0);
      for (std::size_t k = 0; k < m; ++k)
        if (mask >> k & 1u) ++votes[answers[i][k]];
      int b = -1, bc = 0, rc = 0;
      for (int o = 0; o < n_opts[i]; ++o) {
        if (votes[o] > bc) {
          rc = bc;
          bc = votes[o];
          b = o;
        } else if (votes[o] > rc) {
          rc = votes[o];
        }
      }
      top[i] = b;
      top_count[i] = bc;
      unique[i] = bc > rc;
    }
    CommitteeConfig cfg;
    for (std::size_t k = 0; k < m; ++k)
      if (mask >> k & 1u) cfg.members.push_back(pool[k]);
    for (int K = 1; K <= size; ++K) {
      ++best.configurations_visited;
      std::size_t agree = 0, agree_true = 0, flagged = 0, flagged_true = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool j_eq_g = unique[i] && top_count[i] >= K && top[i] == bench[i];
        if (j_eq_g) {
          ++agree;
          agree_true += user[i] == bench[i];
        } else {
          ++flagged;
          flagged_true += user[i] == bench[i];
        }
      }
      const std::optional<double> p =
          agree ? std::optional<double>(static_cast<double>(agree_true) / agree) : std::nullopt;
      const std::optional<double> f =
          flagged ? std::optional<double>(static_cast<double>(flagged_true) / flagged) : std::nullopt;
      const double obj = objective(p, f, lambda);
      cfg.K = K;
      const bool better =
          !have_best || obj > best_obj + kObjectiveTieTolerance ||
          (std::abs(obj - best_obj) <= kObjectiveTieTolerance && preferred_on_tie(cfg, best.config)) ||
          (std::isinf(obj) && std::isinf(best_obj) && preferred_on_tie(cfg, best.config));
      if (better) {
        have_best = true;
        best_obj = obj;
        best.config = cfg;
      }
    }
  }
  best.outcome = evaluate(items, best.config, lambda);
  return best;
}

struct CleanResult {
  std::vector<AuditItem> kept;
  std::vector<AuditItem> removed;
  double noise_ratio = 0.0;
};

/// Removes every item whose committee label differs from the benchmark
/// label, no-consensus included.
inline CleanResult clean(std::span<const AuditItem> items, const CommitteeConfig& cfg) {
  CleanResult out;
  for (const auto& it : items) {
    if (detail::agrees(committee_label(it, cfg), it.benchmark_label))
      out.kept.push_back(it);
    else
      out.removed.push_back(it);
  }
  out.noise_ratio = items.empty() ? 0.0 : static_cast<double>(out.removed.size()) / items.size();
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

inline nlohmann::json item_to_json(const AuditItem& it) {
  nlohmann::json j = {{"item_id", it.item_id},
                      {"benchmark_label", it.benchmark_label},
                      {"model_answers", it.model_answers},
                      {"options", it.options}};
  if (it.user_label) j["user_label"] = *it.user_label;
  return j;
}

inline AuditItem item_from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed = {"item_id", "benchmark_label", "model_answers",
                                                "user_label", "options"};
  try {
    for (const auto& [k, _] : j.items())
      if (!allowed.count(k)) throw ValidationError("audit item: unknown field '" + k + "'");
    AuditItem it;
    it.item_id = j.at("item_id").get<std::string>();
    it.benchmark_label = j.at("benchmark_label").get<std::string>();
    it.model_answers = j.at("model_answers").get<std::map<std::string, std::string>>();
    if (j.contains("user_label") && !j["user_label"].is_null())
      it.user_label = j["user_label"].get<std::string>();
    it.options = j.at("options").get<std::vector<std::string>>();
    it.validate();
    return it;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("audit item: ") + e.what());
  }
}

inline std::vector<AuditItem> items_from_jsonl(std::string_view text) {
  std::vector<AuditItem> out;
  for (const auto& line : split_lines(text)) {
    if (line.empty()) continue;
    try {
      out.push_back(item_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("audit item: ") + e.what());
    }
  }
  return out;
}

inline std::string items_to_jsonl(std::span<const AuditItem> items) {
  std::string out;
  for (const auto& it : items) out += item_to_json(it).dump() + "\n";
  return out;
}

inline nlohmann::json optional_json(std::optional<double> v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

/// {best_committee, K, precision, for_rate, objective, noise_ratio}
inline nlohmann::json report_json(const OptimizeResult& r, double noise_ratio) {
  return {{"best_committee", r.config.members},
          {"K", r.config.K},
          {"precision", optional_json(r.outcome.precision)},
          {"for_rate", optional_json(r.outcome.for_rate)},
          {"objective", std::isfinite(r.outcome.objective) ? nlohmann::json(r.outcome.objective)
                                                           : nlohmann::json(nullptr)},
          {"noise_ratio", noise_ratio}};
}

}  // namespace pcgrpo::audit
