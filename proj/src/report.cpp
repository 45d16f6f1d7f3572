#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "headsearch/error.hpp"
#include "headsearch/pipeline.hpp"

namespace headsearch::pipeline {

namespace fs = std::filesystem;

namespace {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Line chart with one polyline per series, a circle (with <title>) per point
// and a legend listing the series names.
std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series) {
  constexpr double W = 720, H = 440, left = 70, right = 190, top = 40, bottom = 60;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" + fmt(H) +
                    "\" viewBox=\"0 0 " + fmt(W) + " " + fmt(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + xml_escape(title) +
         "</text>\n";
  svg += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0, xv = xmin + (xmax - xmin) * i / 4.0;
    svg += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv) +
           "</text>\n";
    svg += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(top + ph + 18) + "\" text-anchor=\"middle\">" + fmt(xv) +
           "</text>\n";
  }
  svg += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(H - 14) + "\" text-anchor=\"middle\">" +
         xml_escape(xlabel) + "</text>\n";
  svg += "<text transform=\"translate(18," + fmt(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         xml_escape(ylabel) + "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    svg += "<g class=\"series\" data-name=\"" + xml_escape(s.name) + "\">\n<polyline fill=\"none\" stroke=\"" +
           color + "\" stroke-width=\"1.8\" points=\"";
    for (auto [x, y] : s.points) svg += fmt(px(x)) + "," + fmt(py(y)) + " ";
    svg += "\"/>\n";
    for (auto [x, y] : s.points) {
      svg += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) + "\" r=\"2.5\" fill=\"" + color +
             "\"><title>" + xml_escape(s.name) + " " + fmt(x) + ", " + fmt(y) + "</title></circle>\n";
    }
    svg += "</g>\n";
  }

  svg += "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double ly = top + 10 + 20.0 * static_cast<double>(i);
    const char* color = kPalette[i % std::size(kPalette)];
    svg += "<line x1=\"" + fmt(W - right + 15) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(W - right + 40) + "\" y2=\"" +
           fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"3\"/>\n";
    svg += "<text class=\"legend-entry\" x=\"" + fmt(W - right + 46) + "\" y=\"" + fmt(ly + 4) + "\">" +
           xml_escape(series[i].name) + "</text>\n";
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// metrics.csv files are named after their directory; anything else after its stem.
std::string run_name(const fs::path& p) {
  if (p.filename() == "metrics.csv" && p.has_parent_path()) {
    const fs::path parent = p.parent_path();
    std::string name = parent.filename().string();
    if (parent.has_parent_path() && !parent.parent_path().filename().empty()) {
      name = parent.parent_path().filename().string() + "/" + name;
    }
    return name;
  }
  return p.stem().string();
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

ReportSummary cmd_report(const std::vector<fs::path>& metrics_paths, const fs::path& out) {
  if (metrics_paths.empty()) throw ConfigError("report needs at least one metrics file");
  fs::create_directories(out);
  ReportSummary summary;
  std::vector<Series> loss_series, skip_series;
  std::string csv = "run,rows,final_loss,min_loss,final_top1,final_top5,final_skip_fraction,rejected_rows\n";
  std::set<std::string> used;

  for (const fs::path& p : metrics_paths) {
    std::string name = run_name(p);
    for (int k = 2; used.count(name); ++k) name = run_name(p) + "#" + std::to_string(k);
    used.insert(name);
    summary.run_names.push_back(name);

    const ParsedMetrics parsed = read_metrics(p);
    for (const auto& d : parsed.diagnostics) summary.diagnostics.push_back(p.string() + ": " + d);

    Series loss{name, {}}, skip{name, {}};
    std::optional<double> final_loss, min_loss, top1, top5, final_skip;
    double step = 0.0;
    for (const auto& r : parsed.rows) {
      if (r.loss) {
        loss.points.emplace_back(step++, *r.loss);
        final_loss = r.loss;
        min_loss = min_loss ? std::min(*min_loss, *r.loss) : *r.loss;
      }
      if (r.skip_fraction) {
        skip.points.emplace_back(static_cast<double>(r.epoch), *r.skip_fraction);
        final_skip = r.skip_fraction;
      }
      if (r.top1) top1 = r.top1;
      if (r.top5) top5 = r.top5;
    }
    loss_series.push_back(std::move(loss));
    if (!skip.points.empty()) skip_series.push_back(std::move(skip));
    csv += "\"" + name + "\"," + std::to_string(parsed.rows.size()) + "," + opt_cell(final_loss) + "," +
           opt_cell(min_loss) + "," + opt_cell(top1) + "," + opt_cell(top5) + "," + opt_cell(final_skip) + "," +
           std::to_string(parsed.diagnostics.size()) + "\n";
  }

  write_text(out / "summary.csv", csv);
  summary.files.push_back(out / "summary.csv");
  write_text(out / "loss_curves.svg", line_chart("Training loss", "epoch (rows in log order)", "loss", loss_series));
  summary.files.push_back(out / "loss_curves.svg");
  if (!skip_series.empty()) {
    write_text(out / "skip_fraction.svg", line_chart("Identity share of the argmax genotype", "search epoch",
                                                     "skip fraction", skip_series));
    summary.files.push_back(out / "skip_fraction.svg");
  }
  return summary;
}

}  // namespace headsearch::pipeline
