#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace headsearch {

inline constexpr const char* kMetricsHeader = "phase,epoch,loss,lr,top1,top5,skip_fraction";

struct MetricsRow {
  std::string phase;
  long epoch = 0;
  std::optional<double> loss;
  std::optional<double> lr;
  std::optional<double> top1;
  std::optional<double> top5;
  std::optional<double> skip_fraction;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

// Rows grouped by phase; within a phase epochs strictly increase and a phase
// never reappears once another has started.
class MetricsLog {
 public:
  // Throws RangeError when the ordering rule would break.
  void append(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }

  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<MetricsRow> rows_;
};

struct ParsedMetrics {
  std::vector<MetricsRow> rows;
  std::vector<std::string> diagnostics;  // one per rejected row
};

// Malformed rows are skipped with a diagnostic naming the line.
ParsedMetrics parse_metrics_csv(const std::string& text);
ParsedMetrics read_metrics(const std::filesystem::path& path);

}  // namespace headsearch
