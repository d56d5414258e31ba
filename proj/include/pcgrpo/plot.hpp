#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcgrpo/error.hpp"
#include "pcgrpo/io.hpp"
#include "pcgrpo/rac.hpp"

namespace pcgrpo::plot {

/// Numeric CSV: header names and column-major cells; empty cells are absent.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<double>>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }
};

namespace detail {

inline std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_cell(const std::string& cell, std::size_t lineno) {
  if (cell.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE)
    throw ValidationError("csv line " + std::to_string(lineno) + ": not a number '" + cell + "'");
  return v;
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt_coord(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline Table parse_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0].empty()) throw ValidationError("csv: missing header");
  Table t;
  t.header = detail::split_commas(lines[0]);
  t.columns.resize(t.header.size());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = detail::split_commas(lines[i]);
    if (cells.size() != t.header.size())
      throw ValidationError("csv line " + std::to_string(i + 1) + ": expected " +
                            std::to_string(t.header.size()) + " cells, got " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) t.columns[c].push_back(detail::parse_cell(cells[c], i + 1));
  }
  return t;
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.header.size(); ++c) out += (c ? "," : "") + t.header[c];
  out += '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (c) out += ',';
      if (t.columns[c][r]) out += detail::fmt(*t.columns[c][r]);
    }
    out += '\n';
  }
  return out;
}

/// Trailing moving average of every column but the first (the x axis).
inline Table smooth(const Table& t, std::size_t window) {
  Table out = t;
  for (std::size_t c = 1; c < out.columns.size(); ++c)
    out.columns[c] = rac::moving_average(std::span<const std::optional<double>>(t.columns[c]), window);
  return out;
}

inline constexpr double kPanelWidth = 720.0;
inline constexpr double kPanelHeight = 140.0;
inline constexpr double kMargin = 40.0;

/// One stacked panel per series against the first column; each panel has
/// its own y range and a flat series draws as a horizontal line at mid
/// height. Missing cells break the polyline.
inline std::string render_svg(const Table& t, std::string_view title) {
  const std::size_t series = t.columns.size() > 1 ? t.columns.size() - 1 : 0;
  const double width = kPanelWidth + 2 * kMargin;
  const double height = kMargin + series * (kPanelHeight + kMargin);
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt_coord(width) +
                    "\" height=\"" + detail::fmt_coord(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt_coord(kMargin) + "\" y=\"20\" font-size=\"14\">" + detail::xml_escape(title) +
         "</text>\n";

  double xmin = 0, xmax = 0;
  bool have_x = false;
  if (!t.columns.empty())
    for (std::size_t r = 0; r < t.rows(); ++r)
      if (const auto& x = t.columns[0][r]) {
        xmin = have_x ? std::min(xmin, *x) : *x;
        xmax = have_x ? std::max(xmax, *x) : *x;
        have_x = true;
      }
  auto sx = [&](double x) { return kMargin + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * kPanelWidth; };

  for (std::size_t s = 0; s < series; ++s) {
    const auto& col = t.columns[s + 1];
    const double top = kMargin + s * (kPanelHeight + kMargin);
    double ymin = 0, ymax = 0;
    bool have_y = false;
    for (const auto& y : col)
      if (y) {
        ymin = have_y ? std::min(ymin, *y) : *y;
        ymax = have_y ? std::max(ymax, *y) : *y;
        have_y = true;
      }
    auto sy = [&](double y) {
      return top + kPanelHeight - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * kPanelHeight;
    };
    svg += "<g>\n<rect x=\"" + detail::fmt_coord(kMargin) + "\" y=\"" + detail::fmt_coord(top) + "\" width=\"" +
           detail::fmt_coord(kPanelWidth) + "\" height=\"" + detail::fmt_coord(kPanelHeight) +
           "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg += "<text x=\"" + detail::fmt_coord(kMargin + 4) + "\" y=\"" + detail::fmt_coord(top + 14) + "\">" +
           detail::xml_escape(t.header[s + 1]) + (have_y ? " [" + detail::fmt(ymin) + ", " + detail::fmt(ymax) + "]" : "") +
           "</text>\n";
    std::string points;
    auto flush = [&] {
      if (!points.empty())
        svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
      points.clear();
    };
    for (std::size_t r = 0; r < col.size(); ++r) {
      const auto& x = t.columns[0][r];
      if (!x || !col[r]) {
        flush();
        continue;
      }
      if (!points.empty()) points += ' ';
      points += detail::fmt_coord(sx(*x)) + "," + detail::fmt_coord(sy(*col[r]));
    }
    flush();
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace pcgrpo::plot
