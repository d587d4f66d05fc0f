#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dipa::tools {

struct Series {
  std::string label;
  std::vector<double> values;
};

// Grouped bar chart; one group per category, one bar per series.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<Series>& series, const std::string& y_label);

// Polyline per series over x = 0..n-1.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                           const std::string& x_label, const std::string& y_label);

// Writes overlap_histogram.svg, nonobject_counts.svg and accuracy.svg for a
// set of experiment reports. Returns the written file names.
std::vector<std::string> write_report_svgs(const std::vector<nlohmann::json>& reports, const std::string& out_dir);

}  // namespace dipa::tools
