#include "creid/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

namespace creid::harness {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 48;

const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void expand(double v) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  void pad() {
    if (hi <= lo) hi = lo + 1.0;
    const double d = 0.05 * (hi - lo);
    lo -= d;
    hi += d;
  }
};

double map_x(double v, const Range& r) {
  return kMarginLeft + (v - r.lo) / (r.hi - r.lo) *
                           (kWidth - kMarginLeft - kMarginRight);
}

double map_y(double v, const Range& r) {
  return kHeight - kMarginBottom -
         (v - r.lo) / (r.hi - r.lo) * (kHeight - kMarginTop - kMarginBottom);
}

std::string num(double v) { return fmt::format("{:.6g}", v); }

void open_svg(std::ofstream& out, const std::string& title,
              const std::string& x_label, const std::string& y_label,
              const Range& xr, const Range& yr) {
  out << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "viewBox=\"0 0 {} {}\">\n",
      kWidth, kHeight, kWidth, kHeight);
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << fmt::format(
      "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
      "text-anchor=\"middle\">{}</text>\n",
      kWidth / 2, title);
  // Axes.
  out << fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
      kMarginLeft, kHeight - kMarginBottom, kWidth - kMarginRight);
  out << fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
      kMarginLeft, kMarginTop, kHeight - kMarginBottom);
  // Tick labels at the range ends plus midpoints.
  for (double f : {0.0, 0.5, 1.0}) {
    const double xv = xr.lo + f * (xr.hi - xr.lo);
    const double yv = yr.lo + f * (yr.hi - yr.lo);
    out << fmt::format(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" "
        "text-anchor=\"middle\">{}</text>\n",
        num(map_x(xv, xr)), kHeight - kMarginBottom + 16, num(xv));
    out << fmt::format(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" "
        "text-anchor=\"end\">{}</text>\n",
        kMarginLeft - 6, num(map_y(yv, yr) + 4), num(yv));
  }
  out << fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" "
      "text-anchor=\"middle\">{}</text>\n",
      kWidth / 2, kHeight - 12, x_label);
  out << fmt::format(
      "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" "
      "text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
      kHeight / 2, kHeight / 2, y_label);
}

void legend_entry(std::ofstream& out, size_t index, const std::string& name,
                  const std::string& color, bool dashed, bool as_line) {
  const int y = kMarginTop + 8 + static_cast<int>(index) * 16;
  const int x = kWidth - kMarginRight - 150;
  if (as_line) {
    out << fmt::format(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" "
        "stroke-width=\"2\"{}/>\n",
        x, y, x + 22, y, color,
        dashed ? " stroke-dasharray=\"6,4\"" : "");
  } else {
    out << fmt::format(
        "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n", x + 11, y, color);
  }
  out << fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"11\">{}</text>\n",
      x + 28, y + 4, name);
}

}  // namespace

void write_line_chart(const std::filesystem::path& path,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label,
                      const std::vector<LineSeries>& series) {
  if (series.empty()) throw Error("write_line_chart: no series");
  Range xr, yr;
  bool first = true;
  for (const auto& s : series) {
    if (s.xs.size() != s.ys.size())
      throw Error("write_line_chart: xs/ys length mismatch");
    for (size_t i = 0; i < s.xs.size(); ++i) {
      if (first) {
        xr.lo = xr.hi = s.xs[i];
        yr.lo = yr.hi = s.ys[i];
        first = false;
      }
      xr.expand(s.xs[i]);
      yr.expand(s.ys[i]);
    }
  }
  if (first) throw Error("write_line_chart: all series empty");
  xr.pad();
  yr.pad();

  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  open_svg(out, title, x_label, y_label, xr, yr);
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string color = s.color.empty() ? palette(si) : s.color;
    if (s.xs.size() == 1) {
      out << fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                         num(map_x(s.xs[0], xr)), num(map_y(s.ys[0], yr)), color);
    } else {
      std::string pts;
      for (size_t i = 0; i < s.xs.size(); ++i)
        pts += fmt::format("{},{} ", num(map_x(s.xs[i], xr)),
                           num(map_y(s.ys[i], yr)));
      out << fmt::format(
          "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{} "
          "points=\"{}\"/>\n",
          color, s.dashed ? " stroke-dasharray=\"6,4\"" : "", pts);
    }
    legend_entry(out, si, s.name, color, s.dashed, true);
  }
  out << "</svg>\n";
}

void write_scatter_chart(const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label,
                         const std::vector<ScatterGroup>& groups) {
  if (groups.empty()) throw Error("write_scatter_chart: no groups");
  Range xr, yr;
  bool first = true;
  for (const auto& g : groups)
    for (const auto& [x, y] : g.points) {
      if (first) {
        xr.lo = xr.hi = x;
        yr.lo = yr.hi = y;
        first = false;
      }
      xr.expand(x);
      yr.expand(y);
    }
  if (first) throw Error("write_scatter_chart: all groups empty");
  xr.pad();
  yr.pad();

  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  open_svg(out, title, x_label, y_label, xr, yr);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const std::string color = g.color.empty() ? palette(gi) : g.color;
    for (const auto& [x, y] : g.points)
      out << fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\" "
                         "fill-opacity=\"0.7\"/>\n",
                         num(map_x(x, xr)), num(map_y(y, yr)), color);
    legend_entry(out, gi, g.name, color, false, false);
  }
  out << "</svg>\n";
}

}  // namespace creid::harness
