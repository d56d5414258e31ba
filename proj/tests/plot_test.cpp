#include <gtest/gtest.h>

#include <regex>
#include <set>

#include "pcgrpo/plot.hpp"

using namespace pcgrpo;
using namespace pcgrpo::plot;

TEST(PlotCsv, ParsesHeaderAndMissingCells) {
  const auto t = parse_csv("step,a,b\n0,1.5,\n1,2,3\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"step", "a", "b"}));
  ASSERT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.columns[1][0], 1.5);
  EXPECT_FALSE(t.columns[2][0].has_value());
  EXPECT_EQ(t.columns[2][1], 3.0);
}

TEST(PlotCsv, RejectsMalformedInput) {
  EXPECT_THROW(parse_csv(""), ValidationError);
  EXPECT_THROW(parse_csv("step,a\n0\n"), ValidationError);
  EXPECT_THROW(parse_csv("step,a\n0,1,2\n"), ValidationError);
  EXPECT_THROW(parse_csv("step,a\n0,abc\n"), ValidationError);
  EXPECT_THROW(parse_csv("step,a\n0,1e999\n"), ValidationError);
}

TEST(PlotCsv, RoundTripsExactly) {
  const std::string text = "step,x,y\n0,0.10000000000000001,\n1,-2.5,1e-300\n";
  EXPECT_EQ(to_csv(parse_csv(text)), text);
}

TEST(PlotSmooth, WindowOneIsIdentity) {
  const auto t = parse_csv("step,a,b\n0,1,5\n1,,7\n2,3,9\n");
  EXPECT_EQ(to_csv(smooth(t, 1)), to_csv(t));
}

TEST(PlotSmooth, TrailingAverageLeavesStepColumn) {
  const auto t = parse_csv("step,a\n10,1\n20,3\n30,5\n");
  const auto s = smooth(t, 2);
  EXPECT_EQ(s.columns[0], t.columns[0]);
  EXPECT_DOUBLE_EQ(*s.columns[1][0], 1.0);
  EXPECT_DOUBLE_EQ(*s.columns[1][1], 2.0);
  EXPECT_DOUBLE_EQ(*s.columns[1][2], 4.0);
}

namespace {

std::vector<std::string> polylines(const std::string& svg) {
  std::vector<std::string> out;
  const std::regex re("points=\"([^\"]*)\"");
  for (std::sregex_iterator it(svg.begin(), svg.end(), re), end; it != end; ++it) out.push_back((*it)[1]);
  return out;
}

std::set<std::string> y_coords(const std::string& points) {
  std::set<std::string> ys;
  const std::regex re("[0-9.]+,([0-9.]+)");
  for (std::sregex_iterator it(points.begin(), points.end(), re), end; it != end; ++it) ys.insert((*it)[1]);
  return ys;
}

}  // namespace

TEST(PlotSvg, ConstantSeriesIsFlat) {
  const auto svg = render_svg(parse_csv("step,c,v\n0,0.7,1\n1,0.7,2\n2,0.7,4\n3,0.7,3\n"), "t");
  const auto lines = polylines(svg);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(y_coords(lines[0]).size(), 1u);
  EXPECT_EQ(y_coords(lines[1]).size(), 4u);
}

TEST(PlotSvg, MissingCellsBreakTheLine) {
  const auto svg = render_svg(parse_csv("step,a\n0,1\n1,2\n2,\n3,1\n4,2\n"), "t");
  EXPECT_EQ(polylines(svg).size(), 2u);
}

TEST(PlotSvg, EscapesText) {
  const auto svg = render_svg(parse_csv("step,a<b\n0,1\n"), "x & y");
  EXPECT_NE(svg.find("x &amp; y"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
}
