#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cfcl/binary_io.hpp"

namespace cfcl::plot {

struct Series {
  std::string name;
  std::vector<double> x, mean, stderr_;  // stderr_ may be empty
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline void svg_header(std::ostringstream& os, int w, int h, const std::string& title, const std::string& config_hash) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<desc>config_hash=" << config_hash << "</desc>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
}

// Line plot with +/- one standard error bands; x axis logarithmic.
inline void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, const std::vector<Series>& series, const std::string& config_hash) {
  const int w = 640, h = 420, left = 70, right = 160, top = 40, bottom = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.stderr_.empty() ? 0.0 : s.stderr_[i];
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.mean[i] - e);
      ymax = std::max(ymax, s.mean[i] + e);
    }
  if (!(xmin > 0)) xmin = 1e-3;
  if (xmax <= xmin) xmax = xmin * 10;
  if (ymax - ymin < 1e-3) {
    ymin -= 0.01;
    ymax += 0.01;
  }
  auto px = [&](double x) { return left + (std::log(x) - std::log(xmin)) / (std::log(xmax) - std::log(xmin)) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };

  std::ostringstream os;
  svg_header(os, w, h, title, config_hash);
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  os << "<text x=\"15\" y=\"" << (top + h - bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15," << (top + h - bottom) / 2
     << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    os << "<text x=\"" << left - 5 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(yv) << "</text>\n";
  }
  for (const auto& s : series)
    for (double xv : s.x)
      os << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << h - bottom + 14 << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(xv) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    if (!s.stderr_.empty()) {
      os << "<polygon fill=\"" << palette(k) << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) os << fmt(px(s.x[i])) << ',' << fmt(py(s.mean[i] + s.stderr_[i])) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) os << fmt(px(s.x[i])) << ',' << fmt(py(s.mean[i] - s.stderr_[i])) << ' ';
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << palette(k) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << fmt(px(s.x[i])) << ',' << fmt(py(s.mean[i])) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 20 + 18 * k << "\" font-size=\"12\" fill=\"" << palette(k) << "\">"
       << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  binary::write_text_atomic(path, os.str());
}

// Scatter plot with one <circle> per point, coloured by group.
inline void write_scatter(const std::filesystem::path& path, const std::string& title, const std::vector<double>& xy,
                          const std::vector<int>& groups, const std::vector<std::string>& group_names,
                          const std::string& config_hash) {
  const int w = 640, h = 560, pad = 40, legend = 120;
  const std::size_t n = groups.size();
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    xmin = std::min(xmin, xy[2 * i]);
    xmax = std::max(xmax, xy[2 * i]);
    ymin = std::min(ymin, xy[2 * i + 1]);
    ymax = std::max(ymax, xy[2 * i + 1]);
  }
  const double sx = (xmax - xmin) > 0 ? (w - 2 * pad - legend) / (xmax - xmin) : 1.0;
  const double sy = (ymax - ymin) > 0 ? (h - 2 * pad) / (ymax - ymin) : 1.0;
  std::ostringstream os;
  svg_header(os, w, h, title, config_hash);
  for (std::size_t i = 0; i < n; ++i)
    os << "<circle cx=\"" << fmt(pad + (xy[2 * i] - xmin) * sx) << "\" cy=\"" << fmt(h - pad - (xy[2 * i + 1] - ymin) * sy)
       << "\" r=\"2\" fill=\"" << palette(static_cast<std::size_t>(groups[i])) << "\" fill-opacity=\"0.6\"/>\n";
  for (std::size_t g = 0; g < group_names.size(); ++g)
    os << "<text x=\"" << w - legend << "\" y=\"" << pad + 18 * g << "\" font-size=\"12\" fill=\"" << palette(g) << "\">"
       << escape(group_names[g]) << "</text>\n";
  os << "</svg>\n";
  binary::write_text_atomic(path, os.str());
}

}  // namespace cfcl::plot
