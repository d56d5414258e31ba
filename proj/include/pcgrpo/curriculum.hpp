#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "pcgrpo/error.hpp"
#include "pcgrpo/numeric.hpp"
#include "pcgrpo/puzzle.hpp"

namespace pcgrpo::curriculum {

enum class DifficultyKind { BinaryMean, JigsawDiversity };

struct DifficultyStat {
  double d = 0.0;
  DifficultyKind kind = DifficultyKind::BinaryMean;
};

struct CurriculumConfig {
  double sigma = 1.8;
  /// Off means every group gets weight 1 (plain GRPO).
  bool enabled = true;
};

/// Mean success rate of a binary-reward group; d near 1 means easy.
inline DifficultyStat difficulty_binary(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ValidationError("difficulty: group needs G >= 2");
  for (double r : rewards)
    if (r != 0.0 && r != 1.0) throw ValidationError("difficulty: non-binary reward");
  return {mean(rewards), DifficultyKind::BinaryMean};
}

/// (M - 1) / (G - 1) where M counts distinct induced permutations; all
/// invalid answers (repeats, wrong length) share one class.
inline DifficultyStat difficulty_jigsaw(std::span<const std::vector<Token>> answers) {
  if (answers.size() < 2) throw ValidationError("difficulty: group needs G >= 2");
  std::vector<std::vector<Token>> classes;
  classes.reserve(answers.size());
  const std::vector<Token> invalid{-1};
  for (const auto& a : answers) classes.push_back(is_permutation_answer(a) ? a : invalid);
  std::sort(classes.begin(), classes.end());
  const auto distinct = std::unique(classes.begin(), classes.end()) - classes.begin();
  return {static_cast<double>(distinct - 1) / static_cast<double>(answers.size() - 1),
          DifficultyKind::JigsawDiversity};
}

/// w(d) = 4 sigma d (1 - d): zero at both ends, sigma at d = 0.5.
inline double weight(double d, const CurriculumConfig& cfg = {}) {
  if (!(d >= 0.0 && d <= 1.0)) throw ValidationError("curriculum: d must lie in [0, 1]");
  if (!(cfg.sigma > 0.0)) throw ValidationError("curriculum: sigma must be positive");
  if (!cfg.enabled) return 1.0;
  return 4.0 * cfg.sigma * d * (1.0 - d);
}

}  // namespace pcgrpo::curriculum
