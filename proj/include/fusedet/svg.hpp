// svg.hpp - flat SVG line charts for harness reports. Output is plain text
// with fixed formatting so identical inputs give identical bytes.
#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace fusedet::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f6fb2", "#d1495b", "#3a9d5d", "#8f5db2", "#c98a1c", "#4a4a4a"};
  return colors[i % 6];
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<Series>& series,
                              int width = 640, int height = 440) {
  double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
  double ymin = std::numeric_limits<double>::max(), ymax = std::numeric_limits<double>::lowest();
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  const double ml = 60, mr = 20, mt = 36, mb = 46;
  const double pw = width - ml - mr, ph = height - mt - mb;
  const auto px = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
  const auto py = [&](double y) { return mt + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + detail::fmt(width / 2.0) +
         "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\">" +
         title + "</text>\n";
  // Axes.
  out += "<line x1=\"" + detail::fmt(ml) + "\" y1=\"" + detail::fmt(mt + ph) + "\" x2=\"" +
         detail::fmt(ml + pw) + "\" y2=\"" + detail::fmt(mt + ph) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out += "<line x1=\"" + detail::fmt(ml) + "\" y1=\"" + detail::fmt(mt) + "\" x2=\"" +
         detail::fmt(ml) + "\" y2=\"" + detail::fmt(mt + ph) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // Extremal tick labels.
  out += "<text x=\"" + detail::fmt(ml) + "\" y=\"" + detail::fmt(mt + ph + 16) +
         "\" font-size=\"11\" font-family=\"sans-serif\">" + detail::fmt(xmin) + "</text>\n";
  out += "<text x=\"" + detail::fmt(ml + pw) + "\" y=\"" + detail::fmt(mt + ph + 16) +
         "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" +
         detail::fmt(xmax) + "</text>\n";
  out += "<text x=\"" + detail::fmt(ml - 6) + "\" y=\"" + detail::fmt(mt + ph) +
         "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" +
         detail::fmt(ymin) + "</text>\n";
  out += "<text x=\"" + detail::fmt(ml - 6) + "\" y=\"" + detail::fmt(mt + 10) +
         "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" +
         detail::fmt(ymax) + "</text>\n";
  out += "<text x=\"" + detail::fmt(ml + pw / 2) + "\" y=\"" + detail::fmt(mt + ph + 34) +
         "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" + x_label +
         "</text>\n";
  out += "<text x=\"16\" y=\"" + detail::fmt(mt + ph / 2) +
         "\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 " +
         detail::fmt(mt + ph / 2) + ")\" text-anchor=\"middle\">" + y_label + "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      if (!pts.empty()) pts += ' ';
      pts += detail::fmt(px(x)) + "," + detail::fmt(py(y));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(i)) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + detail::fmt(ml + pw - 4) + "\" y=\"" +
           detail::fmt(mt + 14 + 14 * static_cast<double>(i)) +
           "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" +
           detail::palette(i) + "\">" + series[i].label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace fusedet::svg
