#include "s3ta/results.hpp"

#include <cstdio>
#include <filesystem>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"

namespace s3ta {
namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fixed_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_results(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.model) + "," + csv_field(r.attack) + "," + std::to_string(r.steps) + "," +
           std::to_string(r.restarts) + "," + fixed4(r.top1) + "," + fixed4(r.success_rate) + "\n";
  }
  return out;
}

std::string format_records(const std::vector<EvalRecord>& records) {
  std::string out = std::string(kRecordsHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.image_id) + "," + std::to_string(r.label) + "," + std::to_string(r.clean_prediction) + "," +
           std::to_string(r.target) + "," + std::to_string(r.adversarial_prediction) + "," +
           (r.success ? "1" : "0") + "," + (r.robust_correct ? "1" : "0") + "," + fixed4(r.final_loss) + "\n";
  }
  return out;
}

std::string format_metrics(const std::vector<EpochMetrics>& history) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + "," + fixed_g(m.lr) + "," + fixed4(m.adv_loss) + "," + fixed4(m.clean_top1) + "," +
           fixed4(m.robust_top1) + "\n";
  }
  return out;
}

std::string append_results(const std::string& existing, const std::vector<ResultRow>& rows) {
  const std::string fresh = format_results(rows);
  if (existing.empty()) return fresh;
  const std::string header = std::string(kResultsHeader) + "\n";
  if (existing.compare(0, header.size(), header) != 0)
    throw FormatError("not a results file with the expected header", 0);
  std::string out = existing;
  if (out.back() != '\n') out += '\n';
  return out + fresh.substr(header.size());
}

void write_results(const std::vector<ResultRow>& rows, const std::string& path) {
  std::string existing;
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) existing = read_file(path);
  write_file_atomic(path, append_results(existing, rows));
}

}  // namespace s3ta
