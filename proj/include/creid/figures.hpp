#pragma once

#include "creid/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace creid::harness {

// Deterministic SVG emission: identical inputs produce byte-identical files.

struct LineSeries {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
  bool dashed = false;
  std::string color;  // empty: palette by index
};

void write_line_chart(const std::filesystem::path& path,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label,
                      const std::vector<LineSeries>& series);

struct ScatterGroup {
  std::string name;
  std::vector<std::pair<double, double>> points;
  std::string color;
};

void write_scatter_chart(const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label,
                         const std::vector<ScatterGroup>& groups);

}  // namespace creid::harness
