#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffda/errors.hpp"

namespace diffda {

struct PlotSeries {
  std::string label;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<double> vlines;  // vertical reference markers in data units
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

inline std::string fmt(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace detail

// Fixed-canvas line plot. Axis limits are the data extent padded by 5% on
// each side (vertical markers count toward the x extent); the limits are
// also stamped on the root element as data-* attributes. Output depends only
// on the input values, so identical data gives identical bytes.
inline std::string render_line_plot(const PlotSpec& spec) {
  constexpr double kWidth = 720, kHeight = 480;
  constexpr double kLeft = 64, kRight = 704, kTop = 40, kBottom = 432;
  const char* palette[] = {"#4682b4", "#b22222", "#2e8b57",
                           "#ff8c00", "#6a3d9a", "#708090"};
  constexpr int n_colors = 6;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const PlotSeries& s : spec.series) {
    if (s.x.size() != s.y.size()) throw ShapeError("series x and y lengths differ");
    for (Eigen::Index i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  for (double v : spec.vlines) {
    if (!std::isfinite(v)) continue;
    xmin = std::min(xmin, v);
    xmax = std::max(xmax, v);
  }
  if (!std::isfinite(xmin) || !std::isfinite(ymin))
    throw EmptyInputError("no plottable points");

  auto pad = [](double lo, double hi, double& out_lo, double& out_hi) {
    const double span = hi - lo;
    const double p = span > 0.0 ? 0.05 * span : 0.05 * std::max(std::abs(lo), 1.0);
    out_lo = lo - p;
    out_hi = hi + p;
  };
  double ax0, ax1, ay0, ay1;
  pad(xmin, xmax, ax0, ax1);
  pad(ymin, ymax, ay0, ay1);

  auto px = [&](double v) {
    return kLeft + (v - ax0) / (ax1 - ax0) * (kRight - kLeft);
  };
  auto py = [&](double v) {
    return kBottom - (v - ay0) / (ay1 - ay0) * (kBottom - kTop);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"480\"";
  svg += " viewBox=\"0 0 720 480\"";
  svg += " data-xmin=\"" + detail::fmt("%.17g", ax0) + "\"";
  svg += " data-xmax=\"" + detail::fmt("%.17g", ax1) + "\"";
  svg += " data-ymin=\"" + detail::fmt("%.17g", ay0) + "\"";
  svg += " data-ymax=\"" + detail::fmt("%.17g", ay1) + "\">\n";
  svg += "<rect width=\"720\" height=\"480\" fill=\"#ffffff\"/>\n";

  for (int i = 0; i < 5; ++i) {
    const double fx = ax0 + (ax1 - ax0) * i / 4.0;
    const double fy = ay0 + (ay1 - ay0) * i / 4.0;
    const std::string gx = detail::fmt("%.3f", px(fx));
    const std::string gy = detail::fmt("%.3f", py(fy));
    svg += "<line x1=\"" + gx + "\" y1=\"" + detail::fmt("%.3f", kTop) + "\" x2=\"" +
           gx + "\" y2=\"" + detail::fmt("%.3f", kBottom) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + detail::fmt("%.3f", kLeft) + "\" y1=\"" + gy + "\" x2=\"" +
           detail::fmt("%.3f", kRight) + "\" y2=\"" + gy +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + gx + "\" y=\"" + detail::fmt("%.3f", kBottom + 18) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\""
           " text-anchor=\"middle\">" +
           detail::fmt("%.6g", fx) + "</text>\n";
    svg += "<text x=\"" + detail::fmt("%.3f", kLeft - 8) + "\" y=\"" +
           detail::fmt("%.3f", py(fy) + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\""
           " text-anchor=\"end\">" +
           detail::fmt("%.6g", fy) + "</text>\n";
  }

  svg += "<rect x=\"" + detail::fmt("%.3f", kLeft) + "\" y=\"" +
         detail::fmt("%.3f", kTop) + "\" width=\"" +
         detail::fmt("%.3f", kRight - kLeft) + "\" height=\"" +
         detail::fmt("%.3f", kBottom - kTop) +
         "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";

  for (double v : spec.vlines) {
    if (!std::isfinite(v)) continue;
    const std::string gx = detail::fmt("%.3f", px(v));
    svg += "<line x1=\"" + gx + "\" y1=\"" + detail::fmt("%.3f", kTop) + "\" x2=\"" +
           gx + "\" y2=\"" + detail::fmt("%.3f", kBottom) +
           "\" stroke=\"#333333\" stroke-width=\"1.5\" stroke-dasharray=\"5,4\"/>\n";
  }

  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const PlotSeries& ser = spec.series[s];
    const char* color = palette[s % n_colors];
    std::string points;
    auto flush = [&]() {
      if (points.empty()) return;
      svg += "<polyline fill=\"none\" stroke=\"";
      svg += color;
      svg += "\" stroke-width=\"1.8\" points=\"" + points + "\"/>\n";
      points.clear();
    };
    for (Eigen::Index i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) {
        flush();
        continue;
      }
      if (!points.empty()) points += " ";
      points += detail::fmt("%.3f", px(ser.x[i])) + "," +
                detail::fmt("%.3f", py(ser.y[i]));
    }
    flush();
  }

  double ly = kTop + 16;
  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const char* color = palette[s % n_colors];
    const std::string y0 = detail::fmt("%.3f", ly - 4);
    svg += "<line x1=\"" + detail::fmt("%.3f", kRight - 150) + "\" y1=\"" + y0 +
           "\" x2=\"" + detail::fmt("%.3f", kRight - 126) + "\" y2=\"" + y0 +
           "\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.8\"/>\n";
    svg += "<text x=\"" + detail::fmt("%.3f", kRight - 120) + "\" y=\"" +
           detail::fmt("%.3f", ly) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\">" +
           detail::xml_escape(spec.series[s].label) + "</text>\n";
    ly += 16;
  }

  svg += "<text x=\"" + detail::fmt("%.3f", (kLeft + kRight) / 2) + "\" y=\"22\""
         " font-family=\"sans-serif\" font-size=\"15\" fill=\"#111111\""
         " text-anchor=\"middle\">" +
         detail::xml_escape(spec.title) + "</text>\n";
  svg += "<text x=\"" + detail::fmt("%.3f", (kLeft + kRight) / 2) + "\" y=\"" +
         detail::fmt("%.3f", kHeight - 10) +
         "\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#111111\""
         " text-anchor=\"middle\">" +
         detail::xml_escape(spec.x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::fmt("%.3f", (kTop + kBottom) / 2) +
         "\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#111111\""
         " text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::fmt("%.3f", (kTop + kBottom) / 2) + ")\">" +
         detail::xml_escape(spec.y_label) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

inline void write_svg(const std::string& path, const PlotSpec& spec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << render_line_plot(spec);
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace diffda
