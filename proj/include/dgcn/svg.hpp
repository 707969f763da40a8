#pragma once

#include <string>
#include <vector>

namespace dgcn {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  /// Optional +-band around y (same length as y, or empty).
  std::vector<double> spread;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
std::string line_plot_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace dgcn
