#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/encoders.hpp"
#include "slmfuse/losses.hpp"
#include "slmfuse/tensor.hpp"

namespace slmfuse {

enum class DataMode { Latent, Raw };

std::string to_string(DataMode mode);
DataMode data_mode_from_string(const std::string& s);

/// label_k = 1 iff a_k . z > tau_k.
LabelVector planted_labels(std::span<const double> z, const Tensor& directions,
                           std::span<const double> thresholds);

/// tau = ||a|| * Phi^{-1}(1 - p) for standard-normal z.
double planted_threshold(std::span<const double> direction, double positive_rate);

struct TaskSpec {
  std::string name;
  double positive_rate = 0.5;
  double missing_rate = 0.0;
  // Exact-count mode targets.
  std::size_t exact_pos = 0;
  std::size_t exact_neg = 0;
  // Indices into GenConfig::sources whose latent block the task direction
  // spans. Empty: drawn from the seed.
  std::vector<std::size_t> sources;
};

struct GenConfig {
  std::size_t n_records = 2000;
  // Stays per patient ~ Geometric(stay_p) on {1, 2, ...}.
  double stay_p = 0.5;
  // Correlation of latents between stays of one patient.
  double patient_corr = 0.5;
  std::size_t latent_per_source = 2;
  double noise_std = 0.3;
  DataMode mode = DataMode::Latent;
  bool exact_counts = false;
  // Permits tasks whose direction lives in a single source's block.
  bool allow_single_source_tasks = false;
  std::uint64_t seed = 0;
  std::vector<SourceSpec> sources;
  std::vector<TaskSpec> tasks;
};

void validate(const GenConfig& cfg);

/// Desk-sized sources in LM feeding order. Latent mode: 16-wide embeddings.
/// Raw mode: small series counts, 32-long image payloads, 64-token vocabulary.
std::vector<SourceSpec> desk_sources(DataMode mode);

/// Twelve tasks with the counts of the clinical cohort, scaled and rounded
/// (min 1). Exact-count mode.
GenConfig table1_profile(double scale = 1.0);

/// Twelve tasks with positive rates from the cohort ratios clamped to
/// [0.15, 0.85], 20% missing labels, directions spanning 2-3 sources.
GenConfig planted_profile(std::size_t n_records = 2000);

struct RawSourceData {
  std::vector<SeriesSet> series;                          // time series
  std::vector<std::vector<Screening>> screenings;         // image; embedding = raw payload
  std::vector<std::vector<std::uint32_t>> tokens;         // text
};

struct Dataset {
  DataMode mode = DataMode::Latent;
  std::vector<SourceSpec> sources;
  std::vector<std::string> task_names;
  std::vector<std::uint32_t> patients;
  std::vector<LabelVector> labels;
  std::vector<Tensor> embeddings;      // latent mode, one n x dim per source
  std::vector<RawSourceData> raw;      // raw mode, one per source
  std::uint64_t encoder_seed = 0;
  // Planted ground truth.
  Tensor directions;                   // K x (S * latent_per_source)
  std::vector<double> thresholds;
  std::vector<std::vector<std::size_t>> task_sources;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_tasks() const noexcept { return task_names.size(); }
  std::size_t source_index(const std::string& name) const;
};

Dataset generate(const GenConfig& cfg);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

struct LabelCounts {
  std::size_t pos = 0, neg = 0, missing = 0;
};
LabelCounts count_labels(const Dataset& data, std::size_t task);

}  // namespace slmfuse
