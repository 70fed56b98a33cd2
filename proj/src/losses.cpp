#include "slmfuse/losses.hpp"

#include <algorithm>
#include <cmath>

#include "slmfuse/error.hpp"

namespace slmfuse {

std::string to_string(LossKind kind) { return kind == LossKind::Avg ? "avg" : "asl"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "avg") return LossKind::Avg;
  if (s == "asl") return LossKind::Asl;
  throw ValidationError("unknown loss '" + s + "' (expected asl or avg)");
}

void validate(const ASLConfig& cfg) {
  if (!(cfg.margin >= 0.0 && cfg.margin <= 1.0)) {
    throw ValidationError("ASL margin must lie in [0, 1]");
  }
  if (!(cfg.gamma_neg >= 0.0)) throw ValidationError("ASL gamma_neg must be >= 0");
}

ClassWeights class_weights(std::span<const LabelVector> labels, std::size_t num_tasks,
                           std::span<const std::string> task_names) {
  ClassWeights w{std::vector<double>(num_tasks), std::vector<double>(num_tasks)};
  const double two_k = 2.0 * static_cast<double>(num_tasks);
  for (std::size_t k = 0; k < num_tasks; ++k) {
    std::size_t pos = 0, neg = 0;
    for (const auto& y : labels) {
      if (y.size() != num_tasks) throw ValidationError("label vector has wrong length");
      if (y[k] == 1) ++pos;
      if (y[k] == 0) ++neg;
    }
    if (pos == 0 || neg == 0) {
      const std::string name = k < task_names.size() ? task_names[k] : "#" + std::to_string(k);
      throw ValidationError("task " + name + " has " + std::to_string(pos) + " positive and " +
                            std::to_string(neg) + " negative labels; both must be nonzero");
    }
    const double n = static_cast<double>(pos + neg);
    w.pos[k] = n / (two_k * static_cast<double>(pos));
    w.neg[k] = n / (two_k * static_cast<double>(neg));
  }
  return w;
}

ClassWeights unit_weights(std::size_t num_tasks) {
  return {std::vector<double>(num_tasks, 1.0), std::vector<double>(num_tasks, 1.0)};
}

namespace {

double clamp_prob(double phi) { return std::clamp(phi, kProbClamp, 1.0 - kProbClamp); }

void check_label(int y) {
  if (y != 0 && y != 1) throw ValidationError("loss term needs label 0 or 1");
}

}  // namespace

double wbce_term(int y, double phi, double w_pos, double w_neg) {
  check_label(y);
  const double p = clamp_prob(phi);
  return y == 1 ? -w_pos * std::log(p) : -w_neg * std::log(1.0 - p);
}

double asl_term(int y, double phi, const ASLConfig& cfg) {
  check_label(y);
  const double p = clamp_prob(phi);
  if (y == 1) return -(1.0 - p) * std::log(p);
  const double pm = std::max(p - cfg.margin, 0.0);
  if (pm == 0.0) return 0.0;
  return -std::pow(pm, cfg.gamma_neg) * std::log(1.0 - pm);
}

double masked_multilabel_loss(std::span<const std::int8_t> y, std::span<const double> phi,
                              const LossSettings& s) {
  if (y.size() != phi.size()) {
    throw ValidationError("labels and confidences differ in length");
  }
  const bool unit = s.weights.pos.empty();
  double total = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == kUnlabeled) continue;
    if (s.kind == LossKind::Asl) {
      total += asl_term(y[k], phi[k], s.asl);
    } else {
      total += wbce_term(y[k], phi[k], unit ? 1.0 : s.weights.pos.at(k),
                         unit ? 1.0 : s.weights.neg.at(k));
    }
  }
  return total;
}

double projector_loss(std::span<const double> e, std::span<const double> e_hat,
                      std::span<const std::int8_t> y, std::span<const double> phi, double beta,
                      const LossSettings& settings) {
  if (e.size() != e_hat.size()) {
    throw ValidationError("embedding dim " + std::to_string(e.size()) +
                          " != reconstruction dim " + std::to_string(e_hat.size()));
  }
  double rec = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) rec += (e[i] - e_hat[i]) * (e[i] - e_hat[i]);
  return rec + beta * masked_multilabel_loss(y, phi, settings);
}

Var masked_multilabel_loss(Graph& g, Var phi, std::span<const std::int8_t> y,
                           const LossSettings& s) {
  const std::size_t k = y.size();
  if (g.value(phi).size() != k) {
    throw ValidationError("labels have " + std::to_string(k) + " entries, confidences " +
                          std::to_string(g.value(phi).size()));
  }
  const bool unit = s.weights.pos.empty();
  Tensor pos_coef = Tensor::matrix(1, k), neg_coef = Tensor::matrix(1, k);
  for (std::size_t i = 0; i < k; ++i) {
    if (y[i] == 1) pos_coef[i] = (s.kind == LossKind::Avg && !unit) ? s.weights.pos.at(i) : 1.0;
    if (y[i] == 0) neg_coef[i] = (s.kind == LossKind::Avg && !unit) ? s.weights.neg.at(i) : 1.0;
  }
  Var p = ad::min_const(ad::max_const(phi, kProbClamp), 1.0 - kProbClamp);
  Var pos_term, neg_term;
  if (s.kind == LossKind::Asl) {
    pos_term = (p + -1.0) * ad::log(p);
    Var pm = ad::max_const(p + -s.asl.margin, 0.0);
    neg_term = -(ad::pow_const(pm, s.asl.gamma_neg) * ad::log(-pm + 1.0));
  } else {
    pos_term = -ad::log(p);
    neg_term = -ad::log(-p + 1.0);
  }
  return ad::sum(pos_term * g.constant(std::move(pos_coef)) +
                 neg_term * g.constant(std::move(neg_coef)));
}

Var reconstruction_loss(Var e, Var e_hat) { return ad::sum(ad::square(e - e_hat)); }

}  // namespace slmfuse
