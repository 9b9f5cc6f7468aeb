#pragma once

// CSV outputs. Each schema is identified by its header row.

#include <string>
#include <vector>

#include "s3ta/eval.hpp"
#include "s3ta/training.hpp"

namespace s3ta {

/// One row of the summary table: a model under one attack setting.
struct ResultRow {
  std::string model;
  std::string attack;
  int steps = 0;
  int restarts = 1;
  double top1 = 0.0;
  double success_rate = 0.0;
};

inline constexpr const char* kResultsHeader = "model,attack,steps,restarts,top1,success_rate";
inline constexpr const char* kRecordsHeader =
    "image_id,label,clean_prediction,target,adversarial_prediction,success,robust_correct,final_loss";
inline constexpr const char* kMetricsHeader = "epoch,lr,adv_loss,clean_top1,robust_top1";

/// Header plus one line per row; reals with 4 decimals.
std::string format_results(const std::vector<ResultRow>& rows);
std::string format_records(const std::vector<EvalRecord>& records);
std::string format_metrics(const std::vector<EpochMetrics>& history);

/// `existing` (a results file's content, possibly empty) with `rows`
/// appended. Throws FormatError when `existing` has a different header.
std::string append_results(const std::string& existing, const std::vector<ResultRow>& rows);

/// Writes the header-only file when `path` does not exist yet, then appends
/// the rows. An existing file must start with the same header. The whole
/// new file content is committed atomically.
void write_results(const std::vector<ResultRow>& rows, const std::string& path);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace s3ta
