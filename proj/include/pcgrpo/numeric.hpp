#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pcgrpo {

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is independent of how the inputs were produced.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

/// Population variance, two-pass.
inline double variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = mean(xs);
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - m) * (xs[i] - m);
  return pairwise_sum(sq) / static_cast<double>(xs.size());
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace pcgrpo
