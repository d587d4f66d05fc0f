#include "svg_report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dipa::tools {

namespace {

constexpr int kWidth = 640, kHeight = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

struct Frame {
  std::ostringstream os;
  double ymax;
  double plot_w() const { return kWidth - kLeft - kRight; }
  double plot_h() const { return kHeight - kTop - kBottom; }
  double y(double v) const { return kTop + plot_h() * (1.0 - v / ymax); }

  Frame(const std::string& title, double max_value, const std::string& x_label, const std::string& y_label)
      : ymax(max_value > 0 ? max_value * 1.1 : 1.0) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
       << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = ymax * t / 4.0;
      os << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
         << "\" stroke=\"#ddd\"/>\n<text x=\"" << kLeft - 6 << "\" y=\"" << y(v) + 4
         << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    }
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << esc(x_label)
       << "</text>\n<text transform=\"translate(16," << kTop + plot_h() / 2
       << ") rotate(-90)\" text-anchor=\"middle\">" << esc(y_label) << "</text>\n";
  }

  void legend(const std::vector<Series>& series) {
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double x = kLeft + 10 + 150.0 * static_cast<double>(s);
      os << "<rect x=\"" << x << "\" y=\"" << kTop - 12 << "\" width=\"10\" height=\"10\" fill=\""
         << kPalette[s % 6] << "\"/>\n<text x=\"" << x + 14 << "\" y=\"" << kTop - 3 << "\">"
         << esc(series[s].label) << "</text>\n";
    }
  }

  std::string finish() {
    os << "</svg>\n";
    return os.str();
  }
};

double max_of(const std::vector<Series>& series) {
  double m = 0;
  for (const auto& s : series)
    for (double v : s.values) m = std::max(m, v);
  return m;
}

double mean_at(const std::vector<std::vector<double>>& rows, std::size_t i) {
  double s = 0;
  int n = 0;
  for (const auto& r : rows)
    if (i < r.size()) {
      s += r[i];
      ++n;
    }
  return n ? s / n : 0.0;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<Series>& series, const std::string& y_label) {
  Frame f(title, max_of(series), "", y_label);
  const double group = f.plot_w() / std::max<std::size_t>(categories.size(), 1);
  const double bar = group * 0.8 / std::max<std::size_t>(series.size(), 1);
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = kLeft + group * static_cast<double>(c) + group * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = c < series[s].values.size() ? series[s].values[c] : 0.0;
      f.os << "<rect x=\"" << gx + bar * static_cast<double>(s) << "\" y=\"" << f.y(v) << "\" width=\"" << bar * 0.95
           << "\" height=\"" << f.y(0) - f.y(v) << "\" fill=\"" << kPalette[s % 6] << "\"><title>"
           << esc(series[s].label) << ": " << num(v) << "</title></rect>\n";
    }
    f.os << "<text x=\"" << gx + group * 0.4 << "\" y=\"" << f.y(0) + 16 << "\" text-anchor=\"middle\">"
         << esc(categories[c]) << "</text>\n";
  }
  f.legend(series);
  return f.finish();
}

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label) {
  Frame f(title, max_of(series), x_label, y_label);
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.values.size());
  const double dx = n > 1 ? f.plot_w() / static_cast<double>(n - 1) : 0.0;
  for (std::size_t i = 0; i < n; ++i)
    f.os << "<text x=\"" << kLeft + dx * static_cast<double>(i) << "\" y=\"" << f.y(0) + 16
         << "\" text-anchor=\"middle\">" << i << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    f.os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[s % 6] << "\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i)
      f.os << kLeft + dx * static_cast<double>(i) << "," << f.y(series[s].values[i]) << " ";
    f.os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].values.size(); ++i)
      f.os << "<circle cx=\"" << kLeft + dx * static_cast<double>(i) << "\" cy=\"" << f.y(series[s].values[i])
           << "\" r=\"3\" fill=\"" << kPalette[s % 6] << "\"/>\n";
  }
  f.legend(series);
  return f.finish();
}

std::vector<std::string> write_report_svgs(const std::vector<nlohmann::json>& reports, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  auto save = [&](const std::string& name, const std::string& svg) {
    std::ofstream(fs::path(out_dir) / name) << svg;
    written.push_back(name);
  };

  // Overlap histogram, averaged across reports.
  std::vector<std::vector<double>> before, after;
  std::vector<std::string> bins;
  for (const auto& r : reports) {
    auto counts = [](const nlohmann::json& h) {
      std::vector<double> v;
      for (const auto& c : h.at("counts")) v.push_back(c.get<double>());
      return v;
    };
    before.push_back(counts(r.at("overlap_before")));
    after.push_back(counts(r.at("overlap_after")));
    if (bins.empty()) {
      const auto& edges = r.at("overlap_before").at("edges");
      for (std::size_t i = 0; i + 1 < edges.size(); ++i) bins.push_back(num(edges[i].get<double>()));
    }
  }
  Series sb{"before", {}}, sa{"after", {}};
  for (std::size_t i = 0; i < bins.size(); ++i) {
    sb.values.push_back(mean_at(before, i));
    sa.values.push_back(mean_at(after, i));
  }
  save("overlap_histogram.svg",
       bar_chart_svg("Object overlap of active prototypes", bins, {sb, sa}, "prototypes (mean over runs)"));

  std::vector<Series> counts;
  for (const auto& r : reports) {
    Series s{r.value("scheme", std::string("?")) + " seed " + std::to_string(r.value("seed", 0)), {}};
    for (const auto& c : r.at("nonobject_counts")) s.values.push_back(c.get<double>());
    counts.push_back(std::move(s));
  }
  save("nonobject_counts.svg", line_chart_svg("Non-object prototypes per consult", counts, "consult", "count"));

  std::vector<std::string> labels;
  Series a0{"before", {}}, a1{"after deselect", {}}, a2{"after finetune", {}};
  for (const auto& r : reports) {
    labels.push_back(r.value("scheme", std::string("?")) + "/" + std::to_string(r.value("seed", 0)));
    a0.values.push_back(r.value("accuracy_before", 0.0));
    a1.values.push_back(r.value("accuracy_after_deselect", 0.0));
    a2.values.push_back(r.value("accuracy_after_finetune", 0.0));
  }
  save("accuracy.svg", bar_chart_svg("Test accuracy", labels, {a0, a1, a2}, "accuracy"));
  return written;
}

}  // namespace dipa::tools
