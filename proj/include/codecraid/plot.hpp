#pragma once

#include <string>
#include <vector>

namespace codecraid::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG documents; no external renderer needed.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

// One group per label, one bar per series within a group.
std::string bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                      const std::vector<Series>& series);

}  // namespace codecraid::plot
