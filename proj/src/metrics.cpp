#include "headsearch/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "headsearch/error.hpp"

namespace headsearch {

void MetricsLog::append(MetricsRow row) {
  if (row.phase.empty() || row.phase.find_first_of(",\n") != std::string::npos) {
    throw RangeError("metrics: bad phase name '" + row.phase + "'");
  }
  if (!rows_.empty()) {
    const MetricsRow& last = rows_.back();
    if (last.phase == row.phase) {
      if (row.epoch <= last.epoch) throw RangeError("metrics: epochs must strictly increase within " + row.phase);
    } else {
      for (const auto& r : rows_) {
        if (r.phase == row.phase) throw RangeError("metrics: phase " + row.phase + " already closed");
      }
    }
  }
  rows_.push_back(std::move(row));
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

std::optional<double> parse_cell(const std::string& s, bool& ok) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) ok = false;
  return v;
}

}  // namespace

std::string MetricsLog::to_csv() const {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows_) {
    out += r.phase + "," + std::to_string(r.epoch) + "," + cell(r.loss) + "," + cell(r.lr) + "," + cell(r.top1) + "," +
           cell(r.top5) + "," + cell(r.skip_fraction) + "\n";
  }
  return out;
}

void MetricsLog::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics " + path.string());
  out << to_csv();
}

ParsedMetrics parse_metrics_csv(const std::string& text) {
  ParsedMetrics out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != kMetricsHeader) {
        out.diagnostics.push_back("line 1: unexpected header '" + line + "'");
        return out;
      }
      continue;
    }
    std::vector<std::string> cells;
    std::string c;
    std::istringstream ls(line);
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (line.back() == ',') cells.emplace_back();
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (cells.size() != 7) {
      out.diagnostics.push_back(where + "expected 7 cells, got " + std::to_string(cells.size()));
      continue;
    }
    MetricsRow row;
    row.phase = cells[0];
    bool ok = !row.phase.empty();
    long epoch = 0;
    auto [ptr, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), epoch);
    if (ec != std::errc() || ptr != cells[1].data() + cells[1].size() || cells[1].empty()) ok = false;
    row.epoch = epoch;
    row.loss = parse_cell(cells[2], ok);
    row.lr = parse_cell(cells[3], ok);
    row.top1 = parse_cell(cells[4], ok);
    row.top5 = parse_cell(cells[5], ok);
    row.skip_fraction = parse_cell(cells[6], ok);
    if (!ok) {
      out.diagnostics.push_back(where + "malformed value in '" + line + "'");
      continue;
    }
    out.rows.push_back(std::move(row));
  }
  if (!header_seen) out.diagnostics.push_back("empty metrics file");
  return out;
}

ParsedMetrics read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

}  // namespace headsearch
