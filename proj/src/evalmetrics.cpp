#include "slmfuse/evalmetrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"

namespace slmfuse {

double TaskMetrics::f1() const {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

std::string TaskMetrics::degenerate() const {
  if (precision_degenerate && recall_degenerate) return "both";
  if (precision_degenerate) return "precision";
  if (recall_degenerate) return "recall";
  return "none";
}

TaskMetrics precision_recall(std::span<const LabelVector> predictions,
                             std::span<const LabelVector> labels, std::size_t task,
                             const std::string& name) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("precision_recall: " + std::to_string(predictions.size()) +
                          " predictions for " + std::to_string(labels.size()) + " labels");
  }
  TaskMetrics m;
  m.task = name.empty() ? "task" + std::to_string(task) : name;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (task >= labels[i].size() || task >= predictions[i].size()) {
      throw ValidationError("precision_recall: record " + std::to_string(i) + " has no task " +
                            std::to_string(task));
    }
    const int y = labels[i][task];
    if (y == kUnlabeled) continue;
    const bool pred = predictions[i][task] == 1;
    ++m.n_labeled;
    if (y == 1) {
      pred ? ++m.tp : ++m.fn;
    } else {
      pred ? ++m.fp : ++m.tn;
    }
  }
  if (m.tp + m.fp == 0) m.precision_degenerate = true;
  else m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn == 0) m.recall_degenerate = true;
  else m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

std::vector<TaskMetrics> evaluate_tasks(std::span<const LabelVector> predictions,
                                        std::span<const LabelVector> labels,
                                        std::span<const std::string> task_names) {
  std::vector<TaskMetrics> out;
  for (std::size_t k = 0; k < task_names.size(); ++k) {
    out.push_back(precision_recall(predictions, labels, k, task_names[k]));
  }
  return out;
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void check_consistent(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw ValidationError("report: no runs");
  for (const auto& r : runs) {
    bool same = r.tasks.size() == runs.front().tasks.size();
    for (std::size_t k = 0; same && k < r.tasks.size(); ++k) {
      same = r.tasks[k].task == runs.front().tasks[k].task;
    }
    if (!same) {
      throw ValidationError("report: run '" + r.run + "' lists different tasks than run '" +
                            runs.front().run + "'");
    }
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string metrics_csv(std::span<const RunMetrics> runs) {
  std::string out = "task,run,precision,recall,tp,fp,fn,tn,n_labeled,degenerate\n";
  for (const auto& r : runs) {
    for (const auto& m : r.tasks) {
      out += m.task + "," + r.run + "," + fixed(m.precision, 6) + "," + fixed(m.recall, 6) + "," +
             std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn) + "," +
             std::to_string(m.tn) + "," + std::to_string(m.n_labeled) + "," + m.degenerate() + "\n";
    }
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const RunMetrics> runs) {
  write_file(path, metrics_csv(runs));
}

std::vector<RunMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "task,run,precision,recall,tp,fp,fn,tn,n_labeled,degenerate") {
    throw ValidationError(path.string() + ": not a metrics file (bad header)");
  }
  std::vector<RunMetrics> runs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 10) throw ValidationError(where + ": expected 10 columns");
    TaskMetrics m;
    m.task = cells[0];
    try {
      m.precision = std::stod(cells[2]);
      m.recall = std::stod(cells[3]);
      m.tp = std::stoul(cells[4]);
      m.fp = std::stoul(cells[5]);
      m.fn = std::stoul(cells[6]);
      m.tn = std::stoul(cells[7]);
      m.n_labeled = std::stoul(cells[8]);
    } catch (const std::exception&) {
      throw ValidationError(where + ": malformed number");
    }
    const std::string& d = cells[9];
    if (d != "none" && d != "precision" && d != "recall" && d != "both") {
      throw ValidationError(where + ": unknown degenerate flag '" + d + "'");
    }
    m.precision_degenerate = d == "precision" || d == "both";
    m.recall_degenerate = d == "recall" || d == "both";
    auto it = std::find_if(runs.begin(), runs.end(), [&](const RunMetrics& r) { return r.run == cells[1]; });
    if (it == runs.end()) {
      runs.push_back({cells[1], {}});
      it = runs.end() - 1;
    }
    it->tasks.push_back(m);
  }
  if (runs.empty()) throw ValidationError(path.string() + ": no metric rows");
  return runs;
}

std::string render_report_csv(std::span<const RunMetrics> runs) {
  check_consistent(runs);
  std::string out = "task";
  for (const auto& r : runs) out += "," + r.run + " precision," + r.run + " recall";
  out += "\n";
  for (std::size_t k = 0; k < runs.front().tasks.size(); ++k) {
    out += runs.front().tasks[k].task;
    for (const auto& r : runs) out += "," + fixed(r.tasks[k].precision, 3) + "," + fixed(r.tasks[k].recall, 3);
    out += "\n";
  }
  return out;
}

std::string render_report_text(std::span<const RunMetrics> runs) {
  check_consistent(runs);
  std::size_t task_w = 4;
  for (const auto& m : runs.front().tasks) task_w = std::max(task_w, m.task.size());
  std::vector<std::size_t> run_w;
  for (const auto& r : runs) run_w.push_back(std::max<std::size_t>(r.run.size(), 11));

  auto pad = [](std::string s, std::size_t w, bool left) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
  };
  std::string top = pad("", task_w, true), sub = pad("task", task_w, true);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const std::size_t half = (run_w[r] - 1) / 2;
    top += " | " + pad(runs[r].run, run_w[r], true);
    sub += " | " + pad("prec", half, false) + " " + pad("rec", run_w[r] - 1 - half, false);
  }
  std::string out = top + "\n" + sub + "\n" + std::string(sub.size(), '-') + "\n";
  for (std::size_t k = 0; k < runs.front().tasks.size(); ++k) {
    out += pad(runs.front().tasks[k].task, task_w, true);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const std::size_t half = (run_w[r] - 1) / 2;
      out += " | " + pad(fixed(runs[r].tasks[k].precision, 3), half, false) + " " +
             pad(fixed(runs[r].tasks[k].recall, 3), run_w[r] - 1 - half, false);
    }
    out += "\n";
  }
  return out;
}

}  // namespace slmfuse
