#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/autodiff.hpp"

namespace slmfuse {

/// Label alphabet {u, 0, 1}; u (missing or inconclusive) is stored as -1.
inline constexpr std::int8_t kUnlabeled = -1;
using LabelVector = std::vector<std::int8_t>;

/// Confidences are clamped to [eps, 1 - eps] before any logarithm.
inline constexpr double kProbClamp = 1e-7;

enum class LossKind { Avg, Asl };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct ASLConfig {
  double margin = 0.05;
  double gamma_neg = 4.0;
};

void validate(const ASLConfig& cfg);

/// Inverse class-frequency weights per task.
struct ClassWeights {
  std::vector<double> pos;
  std::vector<double> neg;
};

/// w_pos = n_k / (2K P_k), w_neg = n_k / (2K N_k), counting only labeled
/// entries of task k. Throws if a task has no positives or no negatives.
ClassWeights class_weights(std::span<const LabelVector> labels, std::size_t num_tasks,
                           std::span<const std::string> task_names = {});

ClassWeights unit_weights(std::size_t num_tasks);

/// -[y w_pos log(phi) + (1 - y) w_neg log(1 - phi)]
double wbce_term(int y, double phi, double w_pos, double w_neg);

/// y = 1: -(1 - phi) log(phi); y = 0: -p^g log(1 - p) with p = max(phi - m, 0).
double asl_term(int y, double phi, const ASLConfig& cfg);

struct LossSettings {
  LossKind kind = LossKind::Asl;
  ASLConfig asl;
  ClassWeights weights;  // used by Avg; empty means unit weights
};

/// Sum of per-task terms over tasks with y_k != u.
double masked_multilabel_loss(std::span<const std::int8_t> y, std::span<const double> phi,
                              const LossSettings& settings);

/// ||e - e_hat||^2 + beta * masked_multilabel_loss
double projector_loss(std::span<const double> e, std::span<const double> e_hat,
                      std::span<const std::int8_t> y, std::span<const double> phi, double beta,
                      const LossSettings& settings);

// Graph forms. `phi` is a 1 x K row of confidences.
Var masked_multilabel_loss(Graph& g, Var phi, std::span<const std::int8_t> y,
                           const LossSettings& settings);
Var reconstruction_loss(Var e, Var e_hat);

}  // namespace slmfuse
