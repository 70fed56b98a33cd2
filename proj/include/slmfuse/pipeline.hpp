#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/autodiff.hpp"
#include "slmfuse/datagen.hpp"
#include "slmfuse/evalmetrics.hpp"
#include "slmfuse/frozen_lm.hpp"
#include "slmfuse/losses.hpp"

namespace slmfuse {

// ------------------------------------------------------------------ splits

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Patients (in first-appearance order) are shuffled by seed and assigned
/// whole to train until the train record count reaches ratio * n. Indices
/// refer to positions in `patients` and are returned ascending.
Split split_by_patient(std::span<const std::uint32_t> patients, double ratio, std::uint64_t seed);

/// Train/test on the full dataset, then the train part carved into
/// fit/validation (0.8, seed + 1). Both training modes fit on `fit`.
struct DataSplits {
  std::vector<std::size_t> fit, val, test;
};
inline constexpr double kTrainRatio = 0.75;
inline constexpr double kFitRatio = 0.8;
DataSplits make_splits(const Dataset& data, std::uint64_t seed);

// ---------------------------------------------------------------- encoding

/// Per-source normalization fitted on training records (time-series sources
/// of raw datasets only).
using SourceStats = std::vector<std::optional<FeatureStats>>;

/// One n x dim embedding matrix per source for the records `ids`. With
/// `fit`, time-series stats are fitted on these records (rounded to f32) and
/// stored in `stats`; otherwise the given stats are applied.
std::vector<Tensor> encode_records(const Dataset& data, std::span<const std::size_t> ids,
                                   SourceStats& stats, bool fit);

// ---------------------------------------------------------------- training

enum class TrainMode { Joint, Isolated };
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  LossKind loss = LossKind::Asl;
  TrainMode mode = TrainMode::Joint;
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double lr = 5e-4;
  double wd = 3e-4;
  double beta = 10.0;
  ASLConfig asl;
  LMConfig lm;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct Checkpoint {
  TrainConfig config;
  std::vector<SourceSpec> sources;
  std::vector<std::string> task_names;
  DataMode data_mode = DataMode::Latent;
  std::uint64_t encoder_seed = 0;
  DesignatedVocab designated;
  std::uint64_t lm_hash = 0;
  ClassWeights weights;
  SourceStats stats;
  // Projector parameters, named "<source>/enc_w" etc.
  ParamSet params;
  // Per-epoch mean record loss; one row for joint training, one per source
  // for isolated training.
  std::vector<std::vector<double>> history;
};

/// Called after every epoch with (source or "joint", epoch, mean loss).
using EpochCallback = std::function<void(const std::string&, std::size_t, double)>;

/// Untrained checkpoint: seeded projectors, designated vocabulary, class
/// weights from the labels of `ids` (avg loss) or unit weights (asl).
Checkpoint init_checkpoint(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg);

/// Trains on the records `ids` in the mode given by cfg.mode.
Checkpoint train(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg,
                 const EpochCallback& on_epoch = {});
Checkpoint train_joint(const Dataset& data, std::span<const std::size_t> ids, TrainConfig cfg,
                       const EpochCallback& on_epoch = {});
Checkpoint train_isolated(const Dataset& data, std::span<const std::size_t> ids, TrainConfig cfg,
                          const EpochCallback& on_epoch = {});

/// Mean record loss of one batch under the checkpoint's training objective.
/// `source` selects the isolated objective of that source.
double batch_loss(const Checkpoint& ckpt, const FrozenLM& lm, std::span<const Tensor> embeddings,
                  std::span<const LabelVector> labels, std::optional<std::size_t> source = {});

/// One optimizer step's worth of the training objective as a Computation
/// over `params`, for gradient checks. `rows` are 1 x dim embeddings per
/// source in feeding order.
Computation joint_objective(const FrozenLM& lm, const Tensor& head_columns,
                            std::vector<std::string> prefixes, std::vector<Tensor> rows,
                            LabelVector labels, double beta, LossSettings settings);

/// Finite-difference check of the joint objective (ASL, beta 10) w.r.t.
/// every projector parameter on a small config: d_e 8, d_t 16, V 32, two
/// layers, two heads, three sources, four tasks.
GradCheckReport pipeline_gradcheck(std::uint64_t seed, double tol, double h = 1e-5);

// -------------------------------------------------------------- prediction

enum class PredictKind { Joint, Single, IsoJoint };

struct PredictMode {
  PredictKind kind = PredictKind::Joint;
  std::size_t source = 0;  // Single only
};

/// joint, iso-joint or single:<source name>.
PredictMode parse_predict_mode(const std::string& s, std::span<const SourceSpec> sources);
std::string to_string(const PredictMode& mode, std::span<const SourceSpec> sources);

struct Predictions {
  Tensor phi;                         // n x K
  std::vector<LabelVector> labels;    // n x K, phi >= threshold
};

Predictions predict(const Checkpoint& ckpt, const FrozenLM& lm, std::span<const Tensor> embeddings,
                    PredictMode mode, std::optional<double> threshold = {});
Predictions predict(const Checkpoint& ckpt, const Dataset& data, std::span<const std::size_t> ids,
                    PredictMode mode, std::optional<double> threshold = {});

// --------------------------------------------------------------------- BSS

struct BssSelection {
  std::vector<std::size_t> source;    // per task
  std::vector<bool> selectable;       // false: no labeled validation record
  std::vector<std::vector<TaskMetrics>> validation;  // [source][task]
};

/// Highest validation F1 per task; ties go to higher recall, then lower
/// source index. Tasks without labeled validation records are unselectable
/// and fall back to source 0.
BssSelection select_best_sources(std::vector<std::vector<TaskMetrics>> validation);

BssSelection bss_select(const Checkpoint& ckpt, const Dataset& data,
                        std::span<const std::size_t> val_ids);

/// Task k predicted by the single-source model selection.source[k].
Predictions predict_bss(const Checkpoint& ckpt, const Dataset& data,
                        std::span<const std::size_t> ids, const BssSelection& selection);

// -------------------------------------------------------------- checkpoints

/// Rounds every parameter to f32, the precision checkpoints store.
void round_params(Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Rebuilds the frozen LM from the stored config and refuses checkpoints
/// whose LM hash or designated vocabulary do not match.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace slmfuse
