#pragma once

// Small self-contained SVG line charts for training curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ctcasr/error.hpp"

namespace ctcasr::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // non-finite y values are skipped
  bool dashed = false;
  int color = 0;  // palette index
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 720;
  int height = 420;
};

inline std::string escape(const std::string& s) {
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

inline const char* palette(int i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
                                 "#7f7f7f"};
  return colors[((i % 8) + 8) % 8];
}

/// Roughly five round tick values covering [lo, hi].
inline std::vector<double> ticks(double lo, double hi) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) { step = m * mag; break; }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string render(const Chart& c) {
  const double left = 70, right = 180, top = 40, bottom = 50;
  const double pw = c.width - left - right, ph = c.height - top - bottom;

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : c.series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x); x1 = std::max(x1, x);
      y0 = std::min(y0, y); y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) + "\" height=\"" +
       std::to_string(c.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(c.title) +
       "</text>\n";
  o += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(x0, x1)) {
    o += "<line x1=\"" + fmt(px(t)) + "\" y1=\"" + fmt(top + ph) + "\" x2=\"" + fmt(px(t)) + "\" y2=\"" +
         fmt(top + ph + 5) + "\" stroke=\"black\"/>";
    o += "<text x=\"" + fmt(px(t)) + "\" y=\"" + fmt(top + ph + 18) + "\" text-anchor=\"middle\">" + fmt(t) +
         "</text>\n";
  }
  for (double t : ticks(y0, y1)) {
    o += "<line x1=\"" + fmt(left - 5) + "\" y1=\"" + fmt(py(t)) + "\" x2=\"" + fmt(left + pw) + "\" y2=\"" +
         fmt(py(t)) + "\" stroke=\"#ddd\"/>";
    o += "<text x=\"" + fmt(left - 8) + "\" y=\"" + fmt(py(t) + 4) + "\" text-anchor=\"end\">" + fmt(t) +
         "</text>\n";
  }
  o += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(c.height - 10.0) + "\" text-anchor=\"middle\">" +
       escape(c.x_label) + "</text>\n";
  o += "<text transform=\"translate(18," + fmt(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(c.y_label) + "</text>\n";

  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const Series& s = c.series[i];
    std::string pts;
    for (const auto& [x, y] : s.points)
      if (std::isfinite(x) && std::isfinite(y)) pts += fmt(px(x)) + "," + fmt(py(y)) + " ";
    if (!pts.empty()) pts.pop_back();
    const std::string dash = s.dashed ? " stroke-dasharray=\"6,4\"" : "";
    o += "<polyline fill=\"none\" stroke=\"" + std::string(palette(s.color)) + "\" stroke-width=\"1.8\"" + dash +
         " points=\"" + pts + "\"><title>" + escape(s.label) + "</title></polyline>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    o += "<line x1=\"" + fmt(left + pw + 12) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(left + pw + 40) +
         "\" y2=\"" + fmt(ly) + "\" stroke=\"" + palette(s.color) + "\" stroke-width=\"1.8\"" + dash + "/>";
    o += "<text x=\"" + fmt(left + pw + 46) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(s.label) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

inline void write(const Chart& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out << render(c);
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

}  // namespace ctcasr::svg
