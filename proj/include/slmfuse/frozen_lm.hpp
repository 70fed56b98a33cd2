#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slmfuse/autodiff.hpp"

namespace slmfuse {

struct LMConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t vocab = 256;
  std::size_t max_seq = 8;
  std::uint64_t seed = 0;
};

void validate(const LMConfig& config);

/// Seed-initialized pre-norm decoder-only transformer. Weights are fixed at
/// construction and only ever enter graphs as constants.
class FrozenLM {
 public:
  explicit FrozenLM(LMConfig config);

  const LMConfig& config() const noexcept { return config_; }
  std::size_t ffn_dim() const noexcept { return 4 * config_.d_model; }

  /// S x d_model token vectors -> S x vocab logits.
  Tensor forward(const Tensor& inputs) const;
  Var forward(Graph& g, Var inputs) const;
  /// Logits restricted to the columns of `head_columns` (d_model x K), as
  /// produced by head_columns(). Same values as the matching full-logit columns.
  Var forward_columns(Graph& g, Var inputs, const Tensor& head_columns) const;
  Tensor head_columns(std::span<const std::size_t> vocab_indices) const;

  /// FNV-1a over every weight tensor.
  std::uint64_t hash() const;

 private:
  struct Layer {
    Tensor ln1_gain, ln1_offset, wq, wk, wv, wo;
    Tensor ln2_gain, ln2_offset, w1, b1, w2, b2;
  };

  Var trunk(Graph& g, Var inputs) const;

  LMConfig config_;
  std::vector<Layer> layers_;
  Tensor final_gain_, final_offset_;
  Tensor head_;        // d_model x vocab
  Tensor positions_;   // max_seq x d_model, sinusoidal
  std::vector<Tensor> causal_masks_;  // per sequence length
};

FrozenLM init_frozen(const LMConfig& config);
Tensor lm_forward(const FrozenLM& lm, const Tensor& inputs);

/// Mean of S logit rows (S x V -> V).
std::vector<double> fuse_logits(const Tensor& logits);

/// K distinct vocabulary entries whose logits are read out as confidences.
struct DesignatedVocab {
  std::vector<std::size_t> indices;
  std::uint64_t seed = 0;
};

/// Draws K indices from [0, vocab) without replacement.
DesignatedVocab draw_designated(std::size_t vocab, std::size_t k, std::uint64_t seed);

/// sigmoid(logits[index_k]) in designated order.
std::vector<double> extract_confidence(std::span<const double> logits,
                                       const DesignatedVocab& designated);

double sigmoid(double x);

}  // namespace slmfuse
