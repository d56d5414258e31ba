#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pcgrpo/error.hpp"
#include "pcgrpo/raster.hpp"
#include "pcgrpo/rng.hpp"

namespace pcgrpo {

enum class PuzzleKind { Jigsaw, Rotation, PatchFit };

inline std::string_view kind_name(PuzzleKind k) {
  switch (k) {
    case PuzzleKind::Jigsaw: return "jigsaw";
    case PuzzleKind::Rotation: return "rotation";
    case PuzzleKind::PatchFit: return "patchfit";
  }
  return "?";
}

inline PuzzleKind parse_kind(std::string_view name) {
  if (name == "jigsaw") return PuzzleKind::Jigsaw;
  if (name == "rotation") return PuzzleKind::Rotation;
  if (name == "patchfit") return PuzzleKind::PatchFit;
  throw ValidationError("unknown puzzle kind '" + std::string(name) + "'");
}

using Token = int;

inline constexpr int kRotationAngles = 4;
inline constexpr int kBrightnessShift = 24;
inline constexpr int kDecoyRetries = 32;
inline constexpr int kMinMaskSide = 8;

/// Tiles in scrambled order; scramble[i] is the true grid cell (row-major) of
/// tiles[i].
struct JigsawInstance {
  int rows = 0;
  int cols = 0;
  std::vector<Patch> tiles;
  std::vector<int> scramble;
  std::string source_id;
  friend bool operator==(const JigsawInstance&, const JigsawInstance&) = default;
};

/// angle_index k means the source was turned 90*k degrees counterclockwise.
struct RotationInstance {
  ImageRaster raster;
  int angle_index = 0;
  std::string source_id;
  friend bool operator==(const RotationInstance&, const RotationInstance&) = default;
};

struct PatchFitInstance {
  ImageRaster masked;
  Rect mask_rect;
  std::vector<Patch> candidates;
  int truth_index = 0;
  int decoys = 0;
  std::string source_id;
  friend bool operator==(const PatchFitInstance&, const PatchFitInstance&) = default;
};

/// Difficulty knobs of one puzzle family member. rows/cols are used by
/// Jigsaw, decoys by PatchFit.
struct PuzzleParams {
  PuzzleKind kind = PuzzleKind::Rotation;
  int rows = 0;
  int cols = 0;
  int decoys = 0;
  friend bool operator==(const PuzzleParams&, const PuzzleParams&) = default;
};

inline int answer_slots(const PuzzleParams& p) {
  return p.kind == PuzzleKind::Jigsaw ? p.rows * p.cols : 1;
}

inline int vocab_size(const PuzzleParams& p) {
  switch (p.kind) {
    case PuzzleKind::Jigsaw: return p.rows * p.cols;
    case PuzzleKind::Rotation: return kRotationAngles;
    case PuzzleKind::PatchFit: return p.decoys + 1;
  }
  return 0;
}

/// Stable identifier of the answer schema a policy is built for.
inline std::string schema_key(const PuzzleParams& p) {
  switch (p.kind) {
    case PuzzleKind::Jigsaw:
      return "jigsaw/" + std::to_string(p.rows) + "x" + std::to_string(p.cols);
    case PuzzleKind::Rotation: return "rotation";
    case PuzzleKind::PatchFit: return "patchfit/D" + std::to_string(p.decoys);
  }
  return "?";
}

inline void validate_jigsaw_grid(int rows, int cols) {
  if (rows < 1 || cols < 1 || rows * cols < 2 || rows * cols > 9)
    throw ValidationError("jigsaw: grid must satisfy 2 <= rows*cols <= 9");
}

inline void validate_decoys(int d) {
  if (d != 3 && d != 5 && d != 7) throw ValidationError("patchfit: decoys must be 3, 5 or 7");
}

/// One puzzle of any family plus its dataset identifier.
class PuzzleInstance {
 public:
  using Body = std::variant<JigsawInstance, RotationInstance, PatchFitInstance>;

  PuzzleInstance() = default;
  PuzzleInstance(std::string id, Body body) : id_(std::move(id)), body_(std::move(body)) {}

  const std::string& id() const { return id_; }
  const Body& body() const { return body_; }

  PuzzleKind kind() const { return static_cast<PuzzleKind>(body_.index()); }

  PuzzleParams params() const {
    return std::visit(
        [](const auto& b) -> PuzzleParams {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, JigsawInstance>)
            return {PuzzleKind::Jigsaw, b.rows, b.cols, 0};
          else if constexpr (std::is_same_v<T, RotationInstance>)
            return {PuzzleKind::Rotation, 0, 0, 0};
          else
            return {PuzzleKind::PatchFit, 0, 0, b.decoys};
        },
        body_);
  }

  int answer_slots() const { return pcgrpo::answer_slots(params()); }
  int vocab_size() const { return pcgrpo::vocab_size(params()); }

  /// Ground-truth answer as a token sequence.
  std::vector<Token> solution() const {
    return std::visit(
        [](const auto& b) -> std::vector<Token> {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, JigsawInstance>)
            return b.scramble;
          else if constexpr (std::is_same_v<T, RotationInstance>)
            return {b.angle_index};
          else
            return {b.truth_index};
        },
        body_);
  }

  template <typename T>
  const T& as() const { return std::get<T>(body_); }

  friend bool operator==(const PuzzleInstance&, const PuzzleInstance&) = default;

 private:
  std::string id_;
  Body body_;
};

static_assert(std::variant_size_v<PuzzleInstance::Body> == 3);

// ---------------------------------------------------------------------------
// Generators

inline JigsawInstance gen_jigsaw(const ImageRaster& raster, int rows, int cols, Rng& rng,
                                 std::string source_id = {}) {
  validate_jigsaw_grid(rows, cols);
  if (raster.width() < cols || raster.height() < rows)
    throw DimensionError("jigsaw: raster smaller than the grid");
  const int tw = raster.width() / cols;
  const int th = raster.height() / rows;
  // centered crop to the largest grid-divisible size
  const int x0 = (raster.width() - tw * cols) / 2;
  const int y0 = (raster.height() - th * rows) / 2;
  const int n = rows * cols;

  JigsawInstance inst;
  inst.rows = rows;
  inst.cols = cols;
  inst.source_id = std::move(source_id);
  inst.scramble.resize(n);
  std::iota(inst.scramble.begin(), inst.scramble.end(), 0);
  rng.shuffle(std::span<int>(inst.scramble));
  inst.tiles.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int cell = inst.scramble[i];
    inst.tiles.push_back(
        extract(raster, {x0 + (cell % cols) * tw, y0 + (cell / cols) * th, tw, th}));
  }
  return inst;
}

inline RotationInstance gen_rotation(const ImageRaster& raster, Rng& rng,
                                     std::string source_id = {}) {
  RotationInstance inst;
  inst.angle_index = static_cast<int>(rng.uniform_index(kRotationAngles));
  inst.raster = rotate_raster(raster, inst.angle_index);
  inst.source_id = std::move(source_id);
  return inst;
}

namespace detail {

inline Patch brightness_shift(const Patch& p, int channel, int delta) {
  Patch out = p;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      out.at(x, y, channel) =
          static_cast<std::uint8_t>(std::clamp(p.at(x, y, channel) + delta, 0, 255));
  return out;
}

}  // namespace detail

/// Masks a rectangle and offers the true patch among D perturbed decoys.
inline PatchFitInstance gen_patchfit(const ImageRaster& raster, int decoys, Rng& rng,
                                     std::string source_id = {}) {
  validate_decoys(decoys);
  if (raster.width() < kMinMaskSide || raster.height() < kMinMaskSide)
    throw DimensionError("patchfit: raster too small for an 8x8 mask");
  const int mw = std::max(kMinMaskSide, raster.width() / 4);
  const int mh = std::max(kMinMaskSide, raster.height() / 4);
  Rect mask{static_cast<int>(rng.uniform_int(0, raster.width() - mw)),
            static_cast<int>(rng.uniform_int(0, raster.height() - mh)), mw, mh};
  const Patch truth = extract(raster, mask);
  const bool square = mw == mh;
  const bool movable = raster.width() > mw || raster.height() > mh;

  enum class Decoy { Mirror, Rotate, Brightness, Relocate };
  std::vector<Decoy> kinds = {Decoy::Mirror};
  if (square) kinds.push_back(Decoy::Rotate);
  kinds.push_back(Decoy::Brightness);
  if (movable) kinds.push_back(Decoy::Relocate);

  std::vector<Patch> chosen;
  for (int d = 0; d < decoys; ++d) {
    bool placed = false;
    for (int attempt = 0; attempt < kDecoyRetries && !placed; ++attempt) {
      Patch cand;
      switch (kinds[rng.uniform_index(kinds.size())]) {
        case Decoy::Mirror: cand = mirror_patch(truth); break;
        case Decoy::Rotate:
          cand = rotate_patch(truth, 1 + static_cast<int>(rng.uniform_index(3)));
          break;
        case Decoy::Brightness: {
          const int ch = static_cast<int>(rng.uniform_index(3));
          const int sign = rng.bernoulli(0.5) ? 1 : -1;
          cand = detail::brightness_shift(truth, ch, sign * kBrightnessShift);
          break;
        }
        case Decoy::Relocate: {
          Rect other = mask;
          while (other.x == mask.x && other.y == mask.y) {
            other.x = static_cast<int>(rng.uniform_int(0, raster.width() - mw));
            other.y = static_cast<int>(rng.uniform_int(0, raster.height() - mh));
          }
          cand = extract(raster, other);
          break;
        }
      }
      if (cand == truth || std::find(chosen.begin(), chosen.end(), cand) != chosen.end())
        continue;
      chosen.push_back(std::move(cand));
      placed = true;
    }
    if (!placed)
      throw GenerationFailure("patchfit: could not find a distinct decoy after " +
                              std::to_string(kDecoyRetries) + " retries");
  }

  PatchFitInstance inst;
  inst.decoys = decoys;
  inst.mask_rect = mask;
  inst.truth_index = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(decoys) + 1));
  inst.candidates.reserve(decoys + 1);
  auto next_decoy = chosen.begin();
  for (int i = 0; i <= decoys; ++i)
    inst.candidates.push_back(i == inst.truth_index ? truth : *next_decoy++);
  inst.masked = raster;
  for (int y = mask.y; y < mask.y + mask.h; ++y)
    for (int x = mask.x; x < mask.x + mask.w; ++x) inst.masked.set_pixel(x, y, {0, 0, 0});
  inst.source_id = std::move(source_id);
  return inst;
}

// ---------------------------------------------------------------------------
// Rewards

inline bool is_permutation_answer(std::span<const Token> answer) {
  std::vector<bool> seen(answer.size(), false);
  for (Token t : answer) {
    if (t < 0 || static_cast<std::size_t>(t) >= answer.size() || seen[t]) return false;
    seen[t] = true;
  }
  return true;
}

inline void check_answer_shape(const PuzzleInstance& inst, std::span<const Token> answer) {
  if (static_cast<int>(answer.size()) != inst.answer_slots())
    throw MalformedAnswer("answer has " + std::to_string(answer.size()) + " slots, expected " +
                          std::to_string(inst.answer_slots()));
  const int vocab = inst.vocab_size();
  for (Token t : answer)
    if (t < 0 || t >= vocab) throw MalformedAnswer("answer token out of vocabulary");
}

/// Binary exact check for Rotation/PatchFit; fraction of correctly placed
/// tiles for Jigsaw, 0 when the answer repeats a grid position.
inline double reward(const PuzzleInstance& inst, std::span<const Token> answer) {
  check_answer_shape(inst, answer);
  switch (inst.kind()) {
    case PuzzleKind::Rotation:
      return answer[0] == inst.as<RotationInstance>().angle_index ? 1.0 : 0.0;
    case PuzzleKind::PatchFit:
      return answer[0] == inst.as<PatchFitInstance>().truth_index ? 1.0 : 0.0;
    case PuzzleKind::Jigsaw: {
      if (!is_permutation_answer(answer)) return 0.0;
      const auto& scramble = inst.as<JigsawInstance>().scramble;
      int hits = 0;
      for (std::size_t i = 0; i < answer.size(); ++i) hits += answer[i] == scramble[i];
      return static_cast<double>(hits) / static_cast<double>(answer.size());
    }
  }
  return 0.0;
}

/// Expected reward of uniform random answering (uniform permutation for
/// Jigsaw, which has exactly one fixed point in expectation).
inline double random_guess_baseline(const PuzzleParams& p) {
  switch (p.kind) {
    case PuzzleKind::Rotation: return 1.0 / kRotationAngles;
    case PuzzleKind::PatchFit: validate_decoys(p.decoys); return 1.0 / (p.decoys + 1);
    case PuzzleKind::Jigsaw:
      validate_jigsaw_grid(p.rows, p.cols);
      return 1.0 / (p.rows * p.cols);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Configuration sampling

/// Grid shapes offered by the configuration sampler, up to 3x3. Each shape
/// is drawn uniformly and then presented in a uniformly chosen orientation.
inline constexpr std::array<std::array<int, 2>, 5> kJigsawShapes = {
    {{1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}}};

inline constexpr std::array<int, 3> kPatchFitDecoys = {3, 5, 7};

inline PuzzleParams sample_jigsaw_params(Rng& rng) {
  const auto& shape = kJigsawShapes[rng.uniform_index(kJigsawShapes.size())];
  const bool transpose = shape[0] != shape[1] && rng.bernoulli(0.5);
  return {PuzzleKind::Jigsaw, transpose ? shape[1] : shape[0],
          transpose ? shape[0] : shape[1], 0};
}

inline PuzzleParams sample_patchfit_params(Rng& rng) {
  return {PuzzleKind::PatchFit, 0, 0,
          kPatchFitDecoys[rng.uniform_index(kPatchFitDecoys.size())]};
}

/// Analytic mean of the Jigsaw random-guess baseline over the sampler.
inline double jigsaw_sampler_baseline() {
  double s = 0.0;
  for (const auto& shape : kJigsawShapes) s += 1.0 / (shape[0] * shape[1]);
  return s / kJigsawShapes.size();
}

/// Builds one instance of the given parameters from a raster.
inline PuzzleInstance make_puzzle(std::string id, const ImageRaster& raster,
                                  const PuzzleParams& p, Rng& rng, std::string source_id = {}) {
  switch (p.kind) {
    case PuzzleKind::Jigsaw:
      return {std::move(id), gen_jigsaw(raster, p.rows, p.cols, rng, std::move(source_id))};
    case PuzzleKind::Rotation:
      return {std::move(id), gen_rotation(raster, rng, std::move(source_id))};
    case PuzzleKind::PatchFit:
      return {std::move(id), gen_patchfit(raster, p.decoys, rng, std::move(source_id))};
  }
  throw ValidationError("make_puzzle: bad kind");
}

}  // namespace pcgrpo
