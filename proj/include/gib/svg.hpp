#pragma once

// Minimal SVG line plots written as text.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace gib::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<double> separators;  // vertical dashed lines at these x values
  int width = 640;
  int height = 360;
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string render(const Plot& p) {
  const double ml = 60, mr = 20, mt = 30, mb = 45;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : p.series) {
    for (double v : s.x) {
      if (std::isfinite(v)) x0 = std::min(x0, v), x1 = std::max(x1, v);
    }
    for (double v : s.y) {
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  y0 = std::min(y0, 0.0);
  const double pw = p.width - ml - mr, ph = p.height - mt - mb;
  auto sx = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return mt + ph - (v - y0) / (y1 - y0) * ph; };

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(p.width) + "\" height=\"" +
                  std::to_string(p.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(p.width / 2.0) + "\" y=\"18\" text-anchor=\"middle\">" + escape(p.title) + "</text>\n";
  o += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(ml + pw) + "\" y2=\"" + num(mt + ph) +
       "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" + num(mt + ph) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(mt + ph + 15) + "\" text-anchor=\"middle\">" + num(xv) +
         "</text>\n";
    o += "<text x=\"" + num(ml - 5) + "\" y=\"" + num(sy(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  o += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(p.height - 8.0) + "\" text-anchor=\"middle\">" +
       escape(p.x_label) + "</text>\n";
  o += "<text x=\"14\" y=\"" + num(mt + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       num(mt + ph / 2) + ")\">" + escape(p.y_label) + "</text>\n";
  for (double s : p.separators) {
    o += "<line class=\"separator\" x1=\"" + num(sx(s)) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(sx(s)) +
         "\" y2=\"" + num(mt + ph) + "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
  }
  int li = 0;
  for (const auto& s : p.series) {
    std::string pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += num(sx(s.x[i])) + ',' + num(sy(s.y[i])) + ' ';
    }
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    if (!s.label.empty()) {
      o += "<text x=\"" + num(ml + pw - 5) + "\" y=\"" + num(mt + 14.0 + 14.0 * li) + "\" text-anchor=\"end\" fill=\"" +
           s.color + "\">" + escape(s.label) + "</text>\n";
      ++li;
    }
  }
  o += "</svg>\n";
  return o;
}

}  // namespace gib::svg
