#pragma once

// Minimal SVG box plots: one box per group, whiskers at min/max.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bforge::plot {

struct FiveNumber {
  double min, q1, median, q3, max;
};

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline FiveNumber summarize(const std::vector<double>& v) {
  return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
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

/// Renders `groups` (label -> values) on a shared y axis from 0 to max(1, largest value).
inline std::string boxplot_svg(const std::string& title, const std::map<std::string, std::vector<double>>& groups) {
  const double width = 120.0 * static_cast<double>(std::max<std::size_t>(groups.size(), 1)) + 100.0;
  const double height = 360.0, top = 40.0, bottom = 300.0, left = 60.0;
  double ymax = 1.0;
  for (const auto& [_, v] : groups)
    for (double x : v) ymax = std::max(ymax, x);
  auto y = [&](double v) { return bottom - (bottom - top) * v / ymax; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << escape(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << y(v) << "\" x2=\"" << width - 20 << "\" y2=\"" << y(v)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << y(v) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  double cx = left + 70.0;
  for (const auto& [label, values] : groups) {
    if (!values.empty()) {
      const auto f = summarize(values);
      os << "<line x1=\"" << cx << "\" y1=\"" << y(f.min) << "\" x2=\"" << cx << "\" y2=\"" << y(f.max)
         << "\" stroke=\"black\"/>\n";
      os << "<rect x=\"" << cx - 25 << "\" y=\"" << y(f.q3) << "\" width=\"50\" height=\""
         << std::max(y(f.q1) - y(f.q3), 1.0) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
      os << "<line x1=\"" << cx - 25 << "\" y1=\"" << y(f.median) << "\" x2=\"" << cx + 25 << "\" y2=\""
         << y(f.median) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
      for (double v : {f.min, f.max})
        os << "<line x1=\"" << cx - 12 << "\" y1=\"" << y(v) << "\" x2=\"" << cx + 12 << "\" y2=\"" << y(v)
           << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << cx << "\" y=\"" << bottom + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape(label) << "</text>\n";
    os << "<text x=\"" << cx << "\" y=\"" << bottom + 32
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#555\">n=" << values.size()
       << "</text>\n";
    cx += 120.0;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace bforge::plot
