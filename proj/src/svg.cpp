#include "dgcn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dgcn {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string escape(const std::string& s) {
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

std::string tick_label(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

}  // namespace

std::string line_plot_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right;
  const double ph = spec.height - top - bottom;

  auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      const double lo = s.y[i] - (s.spread.empty() ? 0.0 : s.spread[i]);
      const double hi = s.y[i] + (s.spread.empty() ? 0.0 : s.spread[i]);
      if (!std::isfinite(s.y[i]) || (spec.log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(spec.log_y && lo <= 0 ? s.y[i] : lo));
      y1 = std::max(y1, ty(hi));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
      << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double fx = x0 + (x1 - x0) * i / 5.0;
    svg << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << tick_label(fx)
        << "</text>\n";
    const double fy = y0 + (y1 - y0) * i / 5.0;
    const double yy = top + (1.0 - i / 5.0) * ph;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << yy << "\" y2=\"" << yy
        << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">"
        << tick_label(spec.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 12 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    std::ostringstream line, band_hi, band_lo;
    line << std::fixed << std::setprecision(2);
    band_hi << std::fixed << std::setprecision(2);
    band_lo << std::fixed << std::setprecision(2);
    std::vector<std::string> lower;
    bool have_band = !s.spread.empty();
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (spec.log_y && s.y[i] <= 0)) continue;
      line << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      if (have_band) {
        const double hi = s.y[i] + s.spread[i];
        const double lo = s.y[i] - s.spread[i];
        band_hi << px(s.x[i]) << ',' << py(hi) << ' ';
        std::ostringstream p;
        p << std::fixed << std::setprecision(2) << px(s.x[i]) << ',' << py(spec.log_y && lo <= 0 ? s.y[i] : lo);
        lower.push_back(p.str());
      }
    }
    if (have_band && !lower.empty()) {
      std::reverse(lower.begin(), lower.end());
      for (const auto& p : lower) band_hi << p << ' ';
      svg << "<polygon points=\"" << band_hi.str() << "\" fill=\"" << colour << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    svg << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace dgcn
