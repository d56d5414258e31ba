#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "pcgrpo/puzzle.hpp"

namespace pcgrpo {

inline constexpr int kFeatureDim = 64;

/// Fixed-length context vector the policy conditions on.
using ContextFeatures = std::array<double, kFeatureDim>;

namespace features {

// Scale factors bring every statistic to roughly unit range.
inline constexpr double kColorScale = 1.0 / 255.0;
inline constexpr double kTileContrast = 12.0;
inline constexpr double kMismatchScale = 4.0 / 255.0;

template <typename Img>
double mean_channel(const Img& img, int c, int x0, int y0, int w, int h) {
  double s = 0.0;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) s += img.at(x, y, c);
  return s / (static_cast<double>(w) * h);
}

template <typename Img>
double luma(const Img& img, int x, int y) {
  return (img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0;
}

/// Mean forward difference along x (resp. y) of channel c, scaled by the
/// extent so a full-range ramp across the image maps to about 1.
template <typename Img>
double mean_dx(const Img& img, int c) {
  if (img.width() < 2) return 0.0;
  double s = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x + 1 < img.width(); ++x) s += img.at(x + 1, y, c) - img.at(x, y, c);
  return s / (static_cast<double>(img.width() - 1) * img.height()) * (img.width() - 1) *
         kColorScale;
}

template <typename Img>
double mean_dy(const Img& img, int c) {
  if (img.height() < 2) return 0.0;
  double s = 0.0;
  for (int y = 0; y + 1 < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) s += img.at(x, y + 1, c) - img.at(x, y, c);
  return s / (static_cast<double>(img.height() - 1) * img.width()) * (img.height() - 1) *
         kColorScale;
}

template <typename Img>
double mean_luma_dx(const Img& img) {
  return (mean_dx(img, 0) + mean_dx(img, 1) + mean_dx(img, 2)) / 3.0;
}
template <typename Img>
double mean_luma_dy(const Img& img) {
  return (mean_dy(img, 0) + mean_dy(img, 1) + mean_dy(img, 2)) / 3.0;
}

/// Layout: mean RGB [0,3), per-channel dx/dy [3,9), border strips
/// top/bottom/left/right RGB [9,21), top-bottom and left-right contrasts
/// [21,27).
inline void encode_rotation(const RotationInstance& b, ContextFeatures& f) {
  const ImageRaster& r = b.raster;
  const int sh = std::max(1, r.height() / 8);
  const int sw = std::max(1, r.width() / 8);
  for (int c = 0; c < 3; ++c) {
    f[c] = mean_channel(r, c, 0, 0, r.width(), r.height()) * kColorScale;
    f[3 + c] = mean_dx(r, c);
    f[6 + c] = mean_dy(r, c);
    const double top = mean_channel(r, c, 0, 0, r.width(), sh) * kColorScale;
    const double bottom = mean_channel(r, c, 0, r.height() - sh, r.width(), sh) * kColorScale;
    const double left = mean_channel(r, c, 0, 0, sw, r.height()) * kColorScale;
    const double right = mean_channel(r, c, r.width() - sw, 0, sw, r.height()) * kColorScale;
    f[9 + c] = top;
    f[12 + c] = bottom;
    f[15 + c] = left;
    f[18 + c] = right;
    f[21 + c] = top - bottom;
    f[24 + c] = left - right;
  }
}

/// Six features per tile in scrambled order: mean RGB centered over the
/// tiles (scaled), luma dx, luma dy, raw mean luma.
inline void encode_jigsaw(const JigsawInstance& b, ContextFeatures& f) {
  const std::size_t n = b.tiles.size();
  std::vector<std::array<double, 3>> means(n);
  std::array<double, 3> avg{};
  for (std::size_t t = 0; t < n; ++t) {
    const Patch& p = b.tiles[t];
    for (int c = 0; c < 3; ++c) {
      means[t][c] = mean_channel(p, c, 0, 0, p.width(), p.height()) * kColorScale;
      avg[c] += means[t][c] / static_cast<double>(n);
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    double* o = f.data() + 6 * t;
    for (int c = 0; c < 3; ++c) o[c] = (means[t][c] - avg[c]) * kTileContrast;
    o[3] = mean_luma_dx(b.tiles[t]);
    o[4] = mean_luma_dy(b.tiles[t]);
    o[5] = (means[t][0] + means[t][1] + means[t][2]) / 3.0;
  }
}

/// Six features per candidate: mean absolute luma mismatch between each
/// candidate edge and the pixels just outside the mask (top, bottom, left,
/// right; 0 where the mask touches the border), total mismatch, and the
/// luma gap to the ring around the mask. Masked-image mean RGB at [48,51).
inline void encode_patchfit(const PatchFitInstance& b, ContextFeatures& f) {
  const ImageRaster& img = b.masked;
  const Rect& m = b.mask_rect;
  double ring_sum = 0.0;
  int ring_n = 0;
  auto ring_add = [&](int x, int y) {
    ring_sum += luma(img, x, y);
    ++ring_n;
  };
  if (m.y > 0) for (int x = m.x; x < m.x + m.w; ++x) ring_add(x, m.y - 1);
  if (m.y + m.h < img.height()) for (int x = m.x; x < m.x + m.w; ++x) ring_add(x, m.y + m.h);
  if (m.x > 0) for (int y = m.y; y < m.y + m.h; ++y) ring_add(m.x - 1, y);
  if (m.x + m.w < img.width()) for (int y = m.y; y < m.y + m.h; ++y) ring_add(m.x + m.w, y);
  const double ring = ring_n ? ring_sum / ring_n : 0.0;

  for (std::size_t j = 0; j < b.candidates.size(); ++j) {
    const Patch& p = b.candidates[j];
    double* o = f.data() + 6 * j;
    double edge[4] = {0, 0, 0, 0};
    if (m.y > 0) {
      for (int x = 0; x < m.w; ++x) edge[0] += std::abs(luma(p, x, 0) - luma(img, m.x + x, m.y - 1));
      edge[0] /= m.w;
    }
    if (m.y + m.h < img.height()) {
      for (int x = 0; x < m.w; ++x)
        edge[1] += std::abs(luma(p, x, m.h - 1) - luma(img, m.x + x, m.y + m.h));
      edge[1] /= m.w;
    }
    if (m.x > 0) {
      for (int y = 0; y < m.h; ++y) edge[2] += std::abs(luma(p, 0, y) - luma(img, m.x - 1, m.y + y));
      edge[2] /= m.h;
    }
    if (m.x + m.w < img.width()) {
      for (int y = 0; y < m.h; ++y)
        edge[3] += std::abs(luma(p, m.w - 1, y) - luma(img, m.x + m.w, m.y + y));
      edge[3] /= m.h;
    }
    double mean_l = 0.0;
    for (int c = 0; c < 3; ++c) mean_l += mean_channel(p, c, 0, 0, p.width(), p.height()) / 3.0;
    for (int e = 0; e < 4; ++e) o[e] = edge[e] * kMismatchScale;
    o[4] = (edge[0] + edge[1] + edge[2] + edge[3]) * kMismatchScale / 4.0;
    o[5] = ring_n ? std::abs(mean_l - ring) * kMismatchScale : 0.0;
  }
  for (int c = 0; c < 3; ++c)
    f[48 + c] = mean_channel(img, c, 0, 0, img.width(), img.height()) * kColorScale;
}

}  // namespace features

/// Deterministic, zero-padded feature vector for any puzzle kind.
inline ContextFeatures encode_context(const PuzzleInstance& inst) {
  ContextFeatures f{};
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, JigsawInstance>)
          features::encode_jigsaw(b, f);
        else if constexpr (std::is_same_v<T, RotationInstance>)
          features::encode_rotation(b, f);
        else
          features::encode_patchfit(b, f);
      },
      inst.body());
  return f;
}

}  // namespace pcgrpo
