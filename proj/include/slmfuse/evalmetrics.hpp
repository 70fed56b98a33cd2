#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/losses.hpp"

namespace slmfuse {

/// Counts over records whose label is not u. A zero denominator reports 0.0
/// and sets the matching degenerate flag.
struct TaskMetrics {
  std::string task;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t n_labeled = 0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;

  double f1() const;
  /// none, precision, recall or both.
  std::string degenerate() const;
};

/// Column `task` of the n x K prediction and label matrices.
TaskMetrics precision_recall(std::span<const LabelVector> predictions,
                             std::span<const LabelVector> labels, std::size_t task,
                             const std::string& name = "");

std::vector<TaskMetrics> evaluate_tasks(std::span<const LabelVector> predictions,
                                        std::span<const LabelVector> labels,
                                        std::span<const std::string> task_names);

struct RunMetrics {
  std::string run;
  std::vector<TaskMetrics> tasks;
};

/// Columns task,run,precision,recall,tp,fp,fn,tn,n_labeled,degenerate.
std::string metrics_csv(std::span<const RunMetrics> runs);
void write_metrics_csv(const std::filesystem::path& path, std::span<const RunMetrics> runs);
std::vector<RunMetrics> read_metrics_csv(const std::filesystem::path& path);

/// One row per task with a precision and a recall column per run, three
/// decimals. All runs must list the same tasks in the same order.
std::string render_report_csv(std::span<const RunMetrics> runs);
std::string render_report_text(std::span<const RunMetrics> runs);

}  // namespace slmfuse
