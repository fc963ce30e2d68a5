#include "codecraid/plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "codecraid/error.hpp"

namespace codecraid::plot {
namespace {

constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void header(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
}

void axes(std::ostringstream& s, const Frame& f, const std::string& xl, const std::string& yl, bool x_ticks) {
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      s << "<text x=\"" << f.px(x) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x)
        << "</text>\n";
    }
  }
  s << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 14 << "\" text-anchor=\"middle\">" << esc(xl)
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (kTop + kH - kBottom) / 2 << ")\">" << esc(yl) << "</text>\n";
}

void legend(std::ostringstream& s, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 10 + 18.0 * i;
    s << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
      << kColors[i % 7] << "\"/>\n<text x=\"" << kW - kRight + 30 << "\" y=\"" << y + 1 << "\">" << esc(series[i].name)
      << "</text>\n";
  }
}

void widen(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& sr : series) {
    if (sr.x.size() != sr.y.size()) throw ConfigError("line_chart: series '" + sr.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) continue;
      x0 = std::min(x0, sr.x[i]), x1 = std::max(x1, sr.x[i]);
      y0 = std::min(y0, sr.y[i]), y1 = std::max(y1, sr.y[i]);
    }
  }
  widen(x0, x1);
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream s;
  header(s, title);
  axes(s, f, x_label, y_label, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    s << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kColors[k % 7] << "\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      if (std::isfinite(series[k].y[i])) s << num(f.px(series[k].x[i])) << ',' << num(f.py(series[k].y[i])) << ' ';
    s << "\"/>\n";
  }
  legend(s, series);
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                      const std::vector<Series>& series) {
  double y0 = 0.0, y1 = 0.0;
  for (const auto& sr : series) {
    if (sr.y.size() != labels.size()) throw ConfigError("bar_chart: series '" + sr.name + "' has wrong length");
    for (double v : sr.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  widen(y0, y1);
  const Frame f{0.0, static_cast<double>(std::max<std::size_t>(labels.size(), 1)), y0, y1};
  std::ostringstream s;
  header(s, title);
  axes(s, f, "", y_label, false);
  const double group = f.px(1.0) - f.px(0.0);
  const double bar = 0.8 * group / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double gx = f.px(static_cast<double>(g)) + 0.1 * group;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = std::isfinite(series[k].y[g]) ? series[k].y[g] : 0.0;
      const double top = f.py(std::max(v, 0.0)), base = f.py(std::min(v, 0.0));
      s << "<rect x=\"" << num(gx + bar * k) << "\" y=\"" << num(top) << "\" width=\"" << num(bar * 0.95)
        << "\" height=\"" << num(std::max(base - top, 0.5)) << "\" fill=\"" << kColors[k % 7] << "\"/>\n";
    }
    s << "<text x=\"" << num(gx + 0.4 * group) << "\" y=\"" << kH - kBottom + 14
      << "\" text-anchor=\"end\" font-size=\"10\" transform=\"rotate(-35 " << num(gx + 0.4 * group) << ' '
      << kH - kBottom + 14 << ")\">" << esc(labels[g]) << "</text>\n";
  }
  legend(s, series);
  s << "</svg>\n";
  return s.str();
}

}  // namespace codecraid::plot
