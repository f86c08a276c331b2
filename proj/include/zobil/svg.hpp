#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "zobil/errors.hpp"

namespace zobil {

/// One plotted series: a mean line with an optional min/max band.
struct CurveSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y_mean;
  std::vector<double> y_min;  // empty disables the band
  std::vector<double> y_max;
};

struct AxesSpec {
  bool log_y = false;
  std::string x_label = "scaled queries";
  std::string y_label = "hypergradient norm";
  std::string title;
  int width = 720;
  int height = 480;
};

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline const char* svg_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

}  // namespace detail

/// Deterministic standalone SVG line chart: same input bytes in, same output
/// bytes out. Non-positive values are clamped to the data minimum when the
/// y axis is logarithmic.
inline std::string render_svg(const std::vector<CurveSeries>& curves, const AxesSpec& axes) {
  if (curves.empty()) throw InvalidParameterError("render_svg: no curves");
  for (const auto& c : curves)
    if (c.x.empty() || c.x.size() != c.y_mean.size())
      throw InvalidParameterError("render_svg: malformed series '" + c.label + "'");

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
  double y_pos_min = std::numeric_limits<double>::infinity();
  auto scan = [&](const std::vector<double>& ys) {
    for (double v : ys) {
      if (std::isnan(v)) continue;
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
      if (v > 0.0) y_pos_min = std::min(y_pos_min, v);
    }
  };
  for (const auto& c : curves) {
    for (double v : c.x) {
      x_lo = std::min(x_lo, v);
      x_hi = std::max(x_hi, v);
    }
    scan(c.y_mean);
    scan(c.y_min);
    scan(c.y_max);
  }
  if (!(x_hi >= x_lo) || !(y_hi >= y_lo))
    throw InvalidParameterError("render_svg: empty data range");
  if (axes.log_y) {
    if (!std::isfinite(y_pos_min)) throw InvalidParameterError("render_svg: log axis needs positive data");
    y_lo = std::max(y_lo, y_pos_min);
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + (y_lo == 0.0 ? 1.0 : std::abs(y_lo) * 0.1);

  const double ml = 70.0, mr = 20.0, mt = axes.title.empty() ? 20.0 : 40.0, mb = 50.0;
  const double pw = axes.width - ml - mr;
  const double ph = axes.height - mt - mb;
  const auto ty = [&](double v) {
    double t;
    if (axes.log_y)
      t = (std::log10(std::max(v, y_lo)) - std::log10(y_lo)) /
          (std::log10(y_hi) - std::log10(y_lo));
    else
      t = (v - y_lo) / (y_hi - y_lo);
    return mt + ph * (1.0 - t);
  };
  const auto tx = [&](double v) { return ml + pw * (v - x_lo) / (x_hi - x_lo); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(axes.width) +
       "\" height=\"" + std::to_string(axes.height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!axes.title.empty())
    s += "<text x=\"" + detail::svg_num(ml + pw / 2) +
         "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + axes.title + "</text>\n";
  // frame
  s += "<rect x=\"" + detail::svg_num(ml) + "\" y=\"" + detail::svg_num(mt) + "\" width=\"" +
       detail::svg_num(pw) + "\" height=\"" + detail::svg_num(ph) +
       "\" fill=\"none\" stroke=\"#333333\"/>\n";
  // axis ticks: 5 per axis
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
    const double px = tx(fx);
    s += "<line x1=\"" + detail::svg_num(px) + "\" y1=\"" + detail::svg_num(mt + ph) +
         "\" x2=\"" + detail::svg_num(px) + "\" y2=\"" + detail::svg_num(mt + ph + 5) +
         "\" stroke=\"#333333\"/>\n";
    s += "<text x=\"" + detail::svg_num(px) + "\" y=\"" + detail::svg_num(mt + ph + 18) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + detail::svg_num(fx) + "</text>\n";
    double fy;
    if (axes.log_y)
      fy = std::pow(10.0, std::log10(y_lo) + (std::log10(y_hi) - std::log10(y_lo)) * i / 4.0);
    else
      fy = y_lo + (y_hi - y_lo) * i / 4.0;
    const double py = ty(fy);
    s += "<line x1=\"" + detail::svg_num(ml - 5) + "\" y1=\"" + detail::svg_num(py) +
         "\" x2=\"" + detail::svg_num(ml) + "\" y2=\"" + detail::svg_num(py) +
         "\" stroke=\"#333333\"/>\n";
    s += "<text x=\"" + detail::svg_num(ml - 8) + "\" y=\"" + detail::svg_num(py + 4) +
         "\" text-anchor=\"end\" font-size=\"11\">" + detail::svg_num(fy) + "</text>\n";
  }
  s += "<text x=\"" + detail::svg_num(ml + pw / 2) + "\" y=\"" +
       detail::svg_num(axes.height - 12.0) + "\" text-anchor=\"middle\" font-size=\"12\">" +
       axes.x_label + "</text>\n";
  s += "<text x=\"16\" y=\"" + detail::svg_num(mt + ph / 2) +
       "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
       detail::svg_num(mt + ph / 2) + ")\">" + axes.y_label + "</text>\n";

  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const CurveSeries& c = curves[ci];
    const char* color = detail::svg_color(ci);
    if (c.y_min.size() == c.x.size() && c.y_max.size() == c.x.size()) {
      std::string pts;
      for (std::size_t i = 0; i < c.x.size(); ++i)
        pts += detail::svg_num(tx(c.x[i])) + "," + detail::svg_num(ty(c.y_max[i])) + " ";
      for (std::size_t i = c.x.size(); i-- > 0;)
        pts += detail::svg_num(tx(c.x[i])) + "," + detail::svg_num(ty(c.y_min[i])) + " ";
      pts.pop_back();
      s += "<polygon points=\"" + pts + "\" fill=\"" + color +
           "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < c.x.size(); ++i)
      pts += detail::svg_num(tx(c.x[i])) + "," + detail::svg_num(ty(c.y_mean[i])) + " ";
    pts.pop_back();
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"1.6\"/>\n";
    // legend entry
    const double ly = mt + 16.0 + 16.0 * static_cast<double>(ci);
    s += "<line x1=\"" + detail::svg_num(ml + pw - 150) + "\" y1=\"" + detail::svg_num(ly) +
         "\" x2=\"" + detail::svg_num(ml + pw - 126) + "\" y2=\"" + detail::svg_num(ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::svg_num(ml + pw - 120) + "\" y=\"" + detail::svg_num(ly + 4) +
         "\" font-size=\"11\">" + c.label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace zobil
