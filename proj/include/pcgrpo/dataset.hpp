#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcgrpo/base64.hpp"
#include "pcgrpo/io.hpp"
#include "pcgrpo/puzzle.hpp"

namespace pcgrpo {

using nlohmann::json;

namespace detail {

inline std::string encode_ppm(const Patch& p) {
  const std::string ppm = to_ppm(p);
  return base64::encode(std::span(reinterpret_cast<const std::uint8_t*>(ppm.data()), ppm.size()));
}
inline std::string encode_ppm(const ImageRaster& r) {
  const std::string ppm = to_ppm(r);
  return base64::encode(std::span(reinterpret_cast<const std::uint8_t*>(ppm.data()), ppm.size()));
}
inline std::string decode_ppm_bytes(const json& j) {
  const auto bytes = base64::decode(j.get<std::string>());
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace detail

/// One JSON-lines record: {id, kind, params, ground_truth, payload}.
inline json puzzle_to_json(const PuzzleInstance& inst) {
  json j;
  j["id"] = inst.id();
  j["kind"] = std::string(kind_name(inst.kind()));
  switch (inst.kind()) {
    case PuzzleKind::Jigsaw: {
      const auto& b = inst.as<JigsawInstance>();
      j["params"] = {{"rows", b.rows}, {"cols", b.cols}, {"source_id", b.source_id}};
      j["ground_truth"] = {{"scramble", b.scramble}};
      json tiles = json::array();
      for (const auto& t : b.tiles) tiles.push_back(detail::encode_ppm(t));
      j["payload"] = {{"tiles", std::move(tiles)}};
      break;
    }
    case PuzzleKind::Rotation: {
      const auto& b = inst.as<RotationInstance>();
      j["params"] = {{"angles", {0, 90, 180, 270}}, {"source_id", b.source_id}};
      j["ground_truth"] = {{"angle_index", b.angle_index}};
      j["payload"] = {{"raster", detail::encode_ppm(b.raster)}};
      break;
    }
    case PuzzleKind::PatchFit: {
      const auto& b = inst.as<PatchFitInstance>();
      const Rect& m = b.mask_rect;
      j["params"] = {{"decoys", b.decoys}, {"mask", {m.x, m.y, m.w, m.h}}, {"source_id", b.source_id}};
      j["ground_truth"] = {{"truth_index", b.truth_index}};
      json cands = json::array();
      for (const auto& c : b.candidates) cands.push_back(detail::encode_ppm(c));
      j["payload"] = {{"masked", detail::encode_ppm(b.masked)}, {"candidates", std::move(cands)}};
      break;
    }
  }
  return j;
}

/// Parses and validates one record; every instance invariant that can be
/// checked without the source raster is enforced.
inline PuzzleInstance puzzle_from_json(const json& j) {
  try {
    const std::string id = j.at("id").get<std::string>();
    const PuzzleKind kind = parse_kind(j.at("kind").get<std::string>());
    const json& params = j.at("params");
    const json& gt = j.at("ground_truth");
    const json& payload = j.at("payload");
    switch (kind) {
      case PuzzleKind::Jigsaw: {
        JigsawInstance b;
        b.rows = params.at("rows").get<int>();
        b.cols = params.at("cols").get<int>();
        validate_jigsaw_grid(b.rows, b.cols);
        b.source_id = params.value("source_id", "");
        b.scramble = gt.at("scramble").get<std::vector<int>>();
        if (static_cast<int>(b.scramble.size()) != b.rows * b.cols ||
            !is_permutation_answer(b.scramble))
          throw ValidationError("jigsaw: scramble is not a permutation of the grid");
        for (const auto& t : payload.at("tiles"))
          b.tiles.push_back(patch_from_ppm(detail::decode_ppm_bytes(t)));
        if (b.tiles.size() != b.scramble.size())
          throw ValidationError("jigsaw: tile count does not match grid");
        for (const auto& t : b.tiles)
          if (t.width() != b.tiles[0].width() || t.height() != b.tiles[0].height())
            throw ValidationError("jigsaw: tiles differ in size");
        return {id, std::move(b)};
      }
      case PuzzleKind::Rotation: {
        RotationInstance b;
        b.source_id = params.value("source_id", "");
        b.angle_index = gt.at("angle_index").get<int>();
        if (b.angle_index < 0 || b.angle_index >= kRotationAngles)
          throw ValidationError("rotation: angle_index out of range");
        b.raster = raster_from_ppm(detail::decode_ppm_bytes(payload.at("raster")));
        return {id, std::move(b)};
      }
      case PuzzleKind::PatchFit: {
        PatchFitInstance b;
        b.decoys = params.at("decoys").get<int>();
        validate_decoys(b.decoys);
        const auto m = params.at("mask").get<std::vector<int>>();
        if (m.size() != 4) throw ValidationError("patchfit: mask must be [x, y, w, h]");
        b.mask_rect = {m[0], m[1], m[2], m[3]};
        b.source_id = params.value("source_id", "");
        b.truth_index = gt.at("truth_index").get<int>();
        if (b.truth_index < 0 || b.truth_index > b.decoys)
          throw ValidationError("patchfit: truth_index out of range");
        b.masked = raster_from_ppm(detail::decode_ppm_bytes(payload.at("masked")));
        for (const auto& c : payload.at("candidates"))
          b.candidates.push_back(patch_from_ppm(detail::decode_ppm_bytes(c)));
        if (static_cast<int>(b.candidates.size()) != b.decoys + 1)
          throw ValidationError("patchfit: candidate count must be decoys + 1");
        for (const auto& c : b.candidates)
          if (c.width() != b.mask_rect.w || c.height() != b.mask_rect.h)
            throw ValidationError("patchfit: candidate size differs from mask");
        return {id, std::move(b)};
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("dataset record: ") + e.what());
  }
  throw ValidationError("dataset record: bad kind");
}

inline std::string dataset_to_jsonl(const std::vector<PuzzleInstance>& items) {
  std::string out;
  for (const auto& inst : items) {
    out += puzzle_to_json(inst).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PuzzleInstance> dataset_from_jsonl(std::string_view text) {
  std::vector<PuzzleInstance> items;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(text)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      items.push_back(puzzle_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

inline std::vector<PuzzleInstance> load_dataset(const std::string& path) {
  return dataset_from_jsonl(read_file(path));
}

inline void save_dataset(const std::string& path, const std::vector<PuzzleInstance>& items) {
  atomic_write(path, dataset_to_jsonl(items));
}

// ---------------------------------------------------------------------------
// Generation

/// Supplies the k-th source raster and its id.
struct RasterSource {
  std::function<ImageRaster(std::uint64_t index)> raster;
  std::function<std::string(std::uint64_t index)> source_id;
};

inline constexpr int kSyntheticSide = 48;

inline RasterSource synthetic_source(std::uint64_t seed, int side = kSyntheticSide) {
  return {[seed, side](std::uint64_t k) {
            return synthetic_raster(side, side, derive_seed(seed, k, "raster"));
          },
          [seed](std::uint64_t k) {
            return "synthetic:" + std::to_string(seed) + ":" + std::to_string(k);
          }};
}

/// Cycles through the *.ppm files of a directory in sorted order.
inline RasterSource directory_source(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
  if (files.empty()) throw IoError("no .ppm files in " + dir);
  std::sort(files.begin(), files.end());
  auto rasters = std::make_shared<std::vector<ImageRaster>>();
  for (const auto& f : files) {
    try {
      rasters->push_back(read_ppm_file(f.string()));
    } catch (const ValidationError& e) {
      throw IoError("unreadable source " + f.string() + ": " + e.what());
    }
  }
  auto names = std::make_shared<std::vector<std::string>>();
  for (const auto& f : files) names->push_back(f.filename().string());
  return {[rasters](std::uint64_t k) { return (*rasters)[k % rasters->size()]; },
          [names](std::uint64_t k) { return (*names)[k % names->size()]; }};
}

/// How many instances of one kind to produce. Unset params mean "draw from
/// the configuration sampler" (Jigsaw grid shape, PatchFit decoy count).
struct GenRequest {
  PuzzleKind kind = PuzzleKind::Rotation;
  std::size_t count = 0;
  std::optional<PuzzleParams> fixed;
};

/// Instance k uses its own derived stream, so the output is a pure function
/// of (requests, seed, source).
inline std::vector<PuzzleInstance> generate_dataset(const std::vector<GenRequest>& requests,
                                                    std::uint64_t seed,
                                                    const RasterSource& source) {
  std::vector<PuzzleInstance> out;
  std::uint64_t k = 0;
  for (const auto& req : requests) {
    for (std::size_t i = 0; i < req.count; ++i, ++k) {
      Rng rng(derive_seed(seed, k, "puzzle"));
      PuzzleParams p;
      if (req.fixed) {
        p = *req.fixed;
      } else if (req.kind == PuzzleKind::Jigsaw) {
        p = sample_jigsaw_params(rng);
      } else if (req.kind == PuzzleKind::PatchFit) {
        p = sample_patchfit_params(rng);
      } else {
        p = {PuzzleKind::Rotation, 0, 0, 0};
      }
      char id[64];
      std::snprintf(id, sizeof id, "%s-%06llu", std::string(kind_name(req.kind)).c_str(),
                    static_cast<unsigned long long>(k));
      out.push_back(make_puzzle(id, source.raster(k), p, rng, source.source_id(k)));
    }
  }
  return out;
}

}  // namespace pcgrpo
