#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "biaslab/core.hpp"

// Minimal SVG emitter for run artifacts: line charts (BR curves) and
// scatter plots (projected latents).

namespace biaslab {

namespace svg_detail {

struct Frame {
  double x0, x1, y0, y1;   // data range
  int width = 640, height = 420;
  int margin = 56;

  double px(double x) const {
    const double span = x1 - x0 == 0 ? 1 : x1 - x0;
    return margin + (x - x0) / span * (width - 2 * margin);
  }
  double py(double y) const {
    const double span = y1 - y0 == 0 ? 1 : y1 - y0;
    return height - margin - (y - y0) / span * (height - 2 * margin);
  }
};

inline std::string header(const Frame& f, const std::string& title) {
  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
      std::to_string(f.width) + "\" height=\"" + std::to_string(f.height) +
      "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(f.width / 2) +
       "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" +
       title + "</text>\n";
  // axes
  s += "<line x1=\"" + std::to_string(f.margin) + "\" y1=\"" +
       std::to_string(f.height - f.margin) + "\" x2=\"" +
       std::to_string(f.width - f.margin) + "\" y2=\"" +
       std::to_string(f.height - f.margin) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + std::to_string(f.margin) + "\" y1=\"" +
       std::to_string(f.margin) + "\" x2=\"" + std::to_string(f.margin) +
       "\" y2=\"" + std::to_string(f.height - f.margin) +
       "\" stroke=\"black\"/>\n";
  return s;
}

inline std::string axis_labels(const Frame& f, const std::string& xlabel,
                               const std::string& ylabel) {
  std::string s;
  s += "<text x=\"" + std::to_string(f.width / 2) + "\" y=\"" +
       std::to_string(f.height - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\">" +
       xlabel + "</text>\n";
  s += "<text x=\"16\" y=\"" + std::to_string(f.height / 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\" transform=\"rotate(-90 16 " +
       std::to_string(f.height / 2) + ")\">" + ylabel + "</text>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", f.x0);
  s += "<text x=\"" + std::to_string(f.margin) + "\" y=\"" +
       std::to_string(f.height - f.margin + 16) +
       "\" font-family=\"sans-serif\" font-size=\"11\">" + buf + "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g", f.x1);
  s += "<text x=\"" + std::to_string(f.width - f.margin) + "\" y=\"" +
       std::to_string(f.height - f.margin + 16) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       "font-size=\"11\">" +
       buf + "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g", f.y0);
  s += "<text x=\"" + std::to_string(f.margin - 6) + "\" y=\"" +
       std::to_string(f.height - f.margin) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       "font-size=\"11\">" +
       buf + "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g", f.y1);
  s += "<text x=\"" + std::to_string(f.margin - 6) + "\" y=\"" +
       std::to_string(f.margin + 4) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       "font-size=\"11\">" +
       buf + "</text>\n";
  return s;
}

}  // namespace svg_detail

struct Series {
  std::string name;
  std::string color = "#1f77b4";
  std::vector<std::pair<double, double>> points;
};

inline void write_line_chart(const std::vector<Series>& series,
                             const std::string& title,
                             const std::string& xlabel,
                             const std::string& ylabel,
                             const std::filesystem::path& path) {
  using namespace svg_detail;
  Frame f{0, 1, 0, 1};
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        f.x0 = f.x1 = x;
        f.y0 = f.y1 = y;
        first = false;
      }
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
      f.y0 = std::min(f.y0, y);
      f.y1 = std::max(f.y1, y);
    }
  }
  if (first) f = Frame{0, 1, 0, 1};
  if (f.y0 == f.y1) f.y1 = f.y0 + 1;
  if (f.x0 == f.x1) f.x1 = f.x0 + 1;

  std::string out = header(f, title);
  int legend_y = f.margin + 8;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    std::string poly = "<polyline fill=\"none\" stroke=\"" + s.color +
                       "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) {
      poly += std::to_string(f.px(x)) + "," + std::to_string(f.py(y)) + " ";
    }
    out += poly + "\"/>\n";
    for (const auto& [x, y] : s.points) {
      out += "<circle cx=\"" + std::to_string(f.px(x)) + "\" cy=\"" +
             std::to_string(f.py(y)) + "\" r=\"3\" fill=\"" + s.color +
             "\"/>\n";
    }
    out += "<text x=\"" + std::to_string(f.width - f.margin - 4) + "\" y=\"" +
           std::to_string(legend_y) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"" +
           s.color + "\">" + s.name + "</text>\n";
    legend_y += 16;
  }
  out += axis_labels(f, xlabel, ylabel);
  out += "</svg>\n";
  atomic_write_file(path, out);
}

struct ScatterGroup {
  std::string name;
  std::string color = "#1f77b4";
  std::vector<std::array<double, 2>> points;
};

inline void write_scatter_chart(const std::vector<ScatterGroup>& groups,
                                const std::string& title,
                                const std::filesystem::path& path) {
  using namespace svg_detail;
  Frame f{0, 1, 0, 1};
  bool first = true;
  for (const auto& g : groups) {
    for (const auto& p : g.points) {
      if (first) {
        f.x0 = f.x1 = p[0];
        f.y0 = f.y1 = p[1];
        first = false;
      }
      f.x0 = std::min(f.x0, p[0]);
      f.x1 = std::max(f.x1, p[0]);
      f.y0 = std::min(f.y0, p[1]);
      f.y1 = std::max(f.y1, p[1]);
    }
  }
  if (first) f = Frame{0, 1, 0, 1};
  if (f.y0 == f.y1) f.y1 = f.y0 + 1;
  if (f.x0 == f.x1) f.x1 = f.x0 + 1;

  std::string out = header(f, title);
  int legend_y = f.margin + 8;
  for (const auto& g : groups) {
    for (const auto& p : g.points) {
      out += "<circle cx=\"" + std::to_string(f.px(p[0])) + "\" cy=\"" +
             std::to_string(f.py(p[1])) + "\" r=\"3\" fill=\"" + g.color +
             "\" fill-opacity=\"0.7\"/>\n";
    }
    out += "<text x=\"" + std::to_string(f.width - f.margin - 4) + "\" y=\"" +
           std::to_string(legend_y) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"" +
           g.color + "\">" + g.name + "</text>\n";
    legend_y += 16;
  }
  out += "</svg>\n";
  atomic_write_file(path, out);
}

}  // namespace biaslab
