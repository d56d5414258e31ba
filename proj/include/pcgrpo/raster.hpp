#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcgrpo/error.hpp"
#include "pcgrpo/rng.hpp"

namespace pcgrpo {

using Rgb = std::array<std::uint8_t, 3>;

/// Row-major RGB pixel grid, 8 bits per channel. Both sides are at least 2.
class ImageRaster {
 public:
  ImageRaster() = default;

  ImageRaster(int width, int height, Rgb fill = {0, 0, 0})
      : width_(width), height_(height) {
    check_dims(width, height);
    pixels_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < pixels_.size(); i += 3)
      std::copy(fill.begin(), fill.end(), pixels_.begin() + i);
  }

  ImageRaster(int width, int height, std::vector<std::uint8_t> rgb)
      : width_(width), height_(height), pixels_(std::move(rgb)) {
    check_dims(width, height);
    if (pixels_.size() != static_cast<std::size_t>(width) * height * 3)
      throw ValidationError("raster: pixel count does not match width*height");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t at(int x, int y, int c) const {
    return pixels_[index(x, y) + c];
  }
  std::uint8_t& at(int x, int y, int c) { return pixels_[index(x, y) + c]; }

  Rgb pixel(int x, int y) const {
    const std::size_t i = index(x, y);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }
  void set_pixel(int x, int y, Rgb v) {
    const std::size_t i = index(x, y);
    pixels_[i] = v[0];
    pixels_[i + 1] = v[1];
    pixels_[i + 2] = v[2];
  }

  std::span<const std::uint8_t> bytes() const { return pixels_; }

  friend bool operator==(const ImageRaster&, const ImageRaster&) = default;

 private:
  static void check_dims(int width, int height) {
    if (width < 2 || height < 2)
      throw DimensionError("raster: width and height must both be >= 2");
  }
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Sub-rectangle copy. Sides of 1 pixel are allowed here (tiles of fine grids).
struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Pixel block that may be thinner than a full raster (a tile or a patch).
/// Shares ImageRaster's layout but only requires positive sides.
class Patch {
 public:
  Patch() = default;
  Patch(int width, int height, std::vector<std::uint8_t> rgb)
      : width_(width), height_(height), pixels_(std::move(rgb)) {
    if (width < 1 || height < 1)
      throw DimensionError("patch: sides must be positive");
    if (pixels_.size() != static_cast<std::size_t>(width) * height * 3)
      throw ValidationError("patch: pixel count does not match width*height");
  }

  int width() const { return width_; }
  int height() const { return height_; }

  std::uint8_t at(int x, int y, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }
  std::span<const std::uint8_t> bytes() const { return pixels_; }

  friend bool operator==(const Patch&, const Patch&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

inline Patch extract(const ImageRaster& src, Rect r) {
  if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > src.width() ||
      r.y + r.h > src.height())
    throw DimensionError("extract: rectangle outside raster");
  std::vector<std::uint8_t> px;
  px.reserve(static_cast<std::size_t>(r.w) * r.h * 3);
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x)
      for (int c = 0; c < 3; ++c) px.push_back(src.at(x, y, c));
  return Patch(r.w, r.h, std::move(px));
}

inline void paste(ImageRaster& dst, const Patch& p, int x0, int y0) {
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      for (int c = 0; c < 3; ++c) dst.at(x0 + x, y0 + y, c) = p.at(x, y, c);
}

/// Generic quarter-turn rotation over any width/height/accessor triple.
/// Counterclockwise by 90 degrees per step; odd steps swap the sides.
namespace detail {
template <typename Src, typename Make>
auto rotate_quarter(const Src& src, int angle_index, Make make) {
  const int w = src.width(), h = src.height();
  const int k = ((angle_index % 4) + 4) % 4;
  const int nw = (k % 2) ? h : w;
  const int nh = (k % 2) ? w : h;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(nw) * nh * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int nx = x, ny = y;
      switch (k) {
        case 1: nx = y; ny = w - 1 - x; break;
        case 2: nx = w - 1 - x; ny = h - 1 - y; break;
        case 3: nx = h - 1 - y; ny = x; break;
        default: break;
      }
      const std::size_t o = (static_cast<std::size_t>(ny) * nw + nx) * 3;
      for (int c = 0; c < 3; ++c) px[o + c] = src.at(x, y, c);
    }
  }
  return make(nw, nh, std::move(px));
}
}  // namespace detail

inline ImageRaster rotate_raster(const ImageRaster& src, int angle_index) {
  if (angle_index < 0 || angle_index > 3)
    throw ValidationError("rotate_raster: angle_index must be in 0..3");
  return detail::rotate_quarter(src, angle_index, [](int w, int h, auto px) {
    return ImageRaster(w, h, std::move(px));
  });
}

inline Patch rotate_patch(const Patch& src, int angle_index) {
  return detail::rotate_quarter(src, angle_index, [](int w, int h, auto px) {
    return Patch(w, h, std::move(px));
  });
}

inline Patch mirror_patch(const Patch& src) {
  Patch out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(src.width() - 1 - x, y, c);
  return out;
}

/// Centered crop to the largest size whose sides are multiples of the
/// given divisors.
inline ImageRaster center_crop_divisible(const ImageRaster& src, int col_div,
                                         int row_div) {
  const int w = src.width() - src.width() % col_div;
  const int h = src.height() - src.height() % row_div;
  if (w == src.width() && h == src.height()) return src;
  if (w < 2 || h < 2) throw DimensionError("crop: raster too small for grid");
  const int x0 = (src.width() - w) / 2;
  const int y0 = (src.height() - h) / 2;
  const Patch p = extract(src, {x0, y0, w, h});
  return ImageRaster(w, h, std::vector<std::uint8_t>(p.bytes().begin(), p.bytes().end()));
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)

inline std::string to_ppm(int width, int height, std::span<const std::uint8_t> rgb) {
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}
inline std::string to_ppm(const ImageRaster& r) { return to_ppm(r.width(), r.height(), r.bytes()); }
inline std::string to_ppm(const Patch& p) { return to_ppm(p.width(), p.height(), p.bytes()); }

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

inline PpmImage parse_ppm(std::string_view data) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_ws();
    if (pos >= data.size() || !std::isdigit(static_cast<unsigned char>(data[pos])))
      throw ValidationError("ppm: malformed header");
    long v = 0;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + (data[pos++] - '0');
      if (v > 1 << 20) throw ValidationError("ppm: header value too large");
    }
    return static_cast<int>(v);
  };
  if (data.substr(0, 2) != "P6") throw ValidationError("ppm: not a binary P6 file");
  pos = 2;
  PpmImage img;
  img.width = read_int();
  img.height = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw ValidationError("ppm: only maxval 255 is supported");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw ValidationError("ppm: malformed header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (data.size() - pos < n) throw ValidationError("ppm: truncated pixel data");
  img.rgb.assign(data.begin() + pos, data.begin() + pos + n);
  return img;
}

inline ImageRaster raster_from_ppm(std::string_view data) {
  PpmImage img = parse_ppm(data);
  return ImageRaster(img.width, img.height, std::move(img.rgb));
}

inline Patch patch_from_ppm(std::string_view data) {
  PpmImage img = parse_ppm(data);
  return Patch(img.width, img.height, std::move(img.rgb));
}

inline ImageRaster read_ppm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return raster_from_ppm(data);
}

inline void write_ppm_file(const std::string& path, const ImageRaster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string data = to_ppm(r);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

// ---------------------------------------------------------------------------
// Synthetic source images

/// Seeded synthetic "photo": smooth channel gradients with a consistent
/// orientation prior (red fades downwards, blue fades rightwards, like
/// top-lit scenes), a random-direction green gradient, a few translucent
/// shapes, and mild pixel noise.
inline ImageRaster synthetic_raster(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  ImageRaster img(width, height);
  const double red_amp = rng.uniform(120.0, 180.0);
  const double blue_amp = rng.uniform(120.0, 180.0);
  const double red_base = rng.uniform(30.0, 60.0);
  const double blue_base = rng.uniform(30.0, 60.0);
  const double green_angle = rng.uniform(0.0, 6.283185307179586);
  const double green_amp = rng.uniform(20.0, 80.0);
  const double green_base = rng.uniform(70.0, 150.0);

  struct Shape {
    bool disc;
    double cx, cy, rx, ry;
    double alpha;
    Rgb color;
  };
  std::vector<Shape> shapes(static_cast<std::size_t>(rng.uniform_int(1, 3)));
  for (auto& s : shapes) {
    s.disc = rng.bernoulli(0.5);
    s.cx = rng.uniform(0.0, width);
    s.cy = rng.uniform(0.0, height);
    s.rx = rng.uniform(0.08, 0.25) * width;
    s.ry = rng.uniform(0.08, 0.25) * height;
    s.alpha = rng.uniform(0.15, 0.35);
    for (auto& c : s.color) c = static_cast<std::uint8_t>(rng.uniform_index(256));
  }

  const double wx = width > 1 ? width - 1.0 : 1.0;
  const double hy = height > 1 ? height - 1.0 : 1.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = x / wx, v = y / hy;
      double rgb[3] = {
          red_base + red_amp * (1.0 - v),
          green_base + green_amp * ((u - 0.5) * std::cos(green_angle) +
                                    (v - 0.5) * std::sin(green_angle)),
          blue_base + blue_amp * (1.0 - u),
      };
      for (const auto& s : shapes) {
        const double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
        const bool inside = s.disc ? dx * dx + dy * dy <= 1.0
                                   : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside)
          for (int c = 0; c < 3; ++c) rgb[c] = (1 - s.alpha) * rgb[c] + s.alpha * s.color[c];
      }
      Rgb px;
      for (int c = 0; c < 3; ++c) {
        const double noisy = rgb[c] + static_cast<double>(rng.uniform_int(-6, 6));
        px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(noisy), 0L, 255L));
      }
      img.set_pixel(x, y, px);
    }
  }
  return img;
}

}  // namespace pcgrpo
