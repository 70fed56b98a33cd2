#include "slmfuse/frozen_lm.hpp"

#include <cmath>
#include <numeric>

#include "slmfuse/error.hpp"
#include "slmfuse/rng.hpp"

namespace slmfuse {

void validate(const LMConfig& c) {
  if (c.d_model == 0 || c.n_layers == 0 || c.n_heads == 0 || c.vocab == 0 || c.max_seq == 0) {
    throw ValidationError("language model dims must be positive");
  }
  if (c.d_model % c.n_heads != 0) {
    throw ValidationError("d_model " + std::to_string(c.d_model) +
                          " is not divisible by n_heads " + std::to_string(c.n_heads));
  }
}

FrozenLM::FrozenLM(LMConfig config) : config_(config) {
  validate(config_);
  const std::size_t d = config_.d_model, f = ffn_dim();
  Rng rng(derive_seed(config_.seed, "frozen-lm"));
  auto gaussian = [&rng](std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.values()) v = 0.02 * rng.normal();
    return t;
  };
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_gain = Tensor::matrix(1, d, 1.0);
    layer.ln1_offset = Tensor::matrix(1, d);
    layer.wq = gaussian(d, d);
    layer.wk = gaussian(d, d);
    layer.wv = gaussian(d, d);
    layer.wo = gaussian(d, d);
    layer.ln2_gain = Tensor::matrix(1, d, 1.0);
    layer.ln2_offset = Tensor::matrix(1, d);
    layer.w1 = gaussian(d, f);
    layer.b1 = Tensor::matrix(1, f);
    layer.w2 = gaussian(f, d);
    layer.b2 = Tensor::matrix(1, d);
    layers_.push_back(std::move(layer));
  }
  final_gain_ = Tensor::matrix(1, d, 1.0);
  final_offset_ = Tensor::matrix(1, d);
  head_ = gaussian(d, config_.vocab);

  positions_ = Tensor::matrix(config_.max_seq, d);
  for (std::size_t p = 0; p < config_.max_seq; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      positions_.at(p, i) = std::sin(angle);
      if (i + 1 < d) positions_.at(p, i + 1) = std::cos(angle);
    }
  }
  for (std::size_t s = 1; s <= config_.max_seq; ++s) {
    Tensor mask = Tensor::matrix(s, s);
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t k = q + 1; k < s; ++k) mask.at(q, k) = -1e9;
    causal_masks_.push_back(std::move(mask));
  }
}

Var FrozenLM::trunk(Graph& g, Var inputs) const {
  const Tensor& x0 = g.value(inputs);
  const std::size_t seq = x0.rows();
  if (x0.cols() != config_.d_model) {
    throw ValidationError("language model input width " + std::to_string(x0.cols()) +
                          " != d_model " + std::to_string(config_.d_model));
  }
  if (seq == 0 || seq > config_.max_seq) {
    throw ValidationError("sequence length " + std::to_string(seq) + " exceeds max_seq " +
                          std::to_string(config_.max_seq));
  }
  const std::size_t head_dim = config_.d_model / config_.n_heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var pos = ad::slice(g.constant_ref(positions_), 0, 0, seq);
  Var mask = g.constant_ref(causal_masks_[seq - 1]);

  Var x = inputs + pos;
  for (const Layer& L : layers_) {
    Var h = ad::layer_norm(x, g.constant_ref(L.ln1_gain), g.constant_ref(L.ln1_offset));
    Var q = ad::matmul(h, g.constant_ref(L.wq));
    Var k = ad::matmul(h, g.constant_ref(L.wk));
    Var v = ad::matmul(h, g.constant_ref(L.wv));
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < config_.n_heads; ++hd) {
      const std::size_t start = hd * head_dim;
      Var qh = ad::slice(q, 1, start, head_dim);
      Var kh = ad::slice(k, 1, start, head_dim);
      Var vh = ad::slice(v, 1, start, head_dim);
      Var scores = ad::matmul_bt(qh, kh) * score_scale + mask;
      heads.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    Var attn = heads.size() == 1 ? heads.front() : ad::concat(heads, 1);
    x = x + ad::matmul(attn, g.constant_ref(L.wo));
    Var h2 = ad::layer_norm(x, g.constant_ref(L.ln2_gain), g.constant_ref(L.ln2_offset));
    Var ff = ad::gelu(ad::matmul(h2, g.constant_ref(L.w1)) + g.constant_ref(L.b1));
    x = x + (ad::matmul(ff, g.constant_ref(L.w2)) + g.constant_ref(L.b2));
  }
  return ad::layer_norm(x, g.constant_ref(final_gain_), g.constant_ref(final_offset_));
}

Var FrozenLM::forward(Graph& g, Var inputs) const {
  return ad::matmul(trunk(g, inputs), g.constant_ref(head_));
}

Var FrozenLM::forward_columns(Graph& g, Var inputs, const Tensor& head_columns) const {
  if (head_columns.rows() != config_.d_model) {
    throw ValidationError("head columns have " + std::to_string(head_columns.rows()) +
                          " rows, expected d_model " + std::to_string(config_.d_model));
  }
  return ad::matmul(trunk(g, inputs), g.constant_ref(head_columns));
}

Tensor FrozenLM::forward(const Tensor& inputs) const {
  Graph g(false);
  Var out = forward(g, g.input(inputs, false));
  return g.value(out);
}

Tensor FrozenLM::head_columns(std::span<const std::size_t> idx) const {
  Tensor cols = Tensor::matrix(config_.d_model, idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= config_.vocab) {
      throw ValidationError("vocabulary index " + std::to_string(idx[j]) + " out of range");
    }
    for (std::size_t r = 0; r < config_.d_model; ++r) cols.at(r, j) = head_.at(r, idx[j]);
  }
  return cols;
}

std::uint64_t FrozenLM::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Layer& L : layers_) {
    for (const Tensor* t : {&L.ln1_gain, &L.ln1_offset, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_gain,
                            &L.ln2_offset, &L.w1, &L.b1, &L.w2, &L.b2}) {
      h = fnv1a(*t, h);
    }
  }
  for (const Tensor* t : {&final_gain_, &final_offset_, &head_, &positions_}) h = fnv1a(*t, h);
  return h;
}

FrozenLM init_frozen(const LMConfig& config) { return FrozenLM(config); }

Tensor lm_forward(const FrozenLM& lm, const Tensor& inputs) { return lm.forward(inputs); }

std::vector<double> fuse_logits(const Tensor& logits) {
  if (logits.empty()) throw ValidationError("fuse_logits: no logit vectors");
  const std::size_t s = logits.rows(), v = logits.cols();
  std::vector<double> out(v, 0.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < v; ++j) out[j] += logits.at(i, j);
  const double inv = 1.0 / static_cast<double>(s);
  for (double& x : out) x *= inv;
  return out;
}

DesignatedVocab draw_designated(std::size_t vocab, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k >= vocab) {
    throw ValidationError("need 0 < K < vocab for designated entries (K=" + std::to_string(k) +
                          ", vocab=" + std::to_string(vocab) + ")");
  }
  std::vector<std::size_t> pool(vocab);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(derive_seed(seed, "designated-vocab"));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(vocab - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return {std::move(pool), seed};
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> extract_confidence(std::span<const double> logits,
                                       const DesignatedVocab& designated) {
  std::vector<double> phi;
  phi.reserve(designated.indices.size());
  for (std::size_t idx : designated.indices) {
    if (idx >= logits.size()) {
      throw ValidationError("designated index " + std::to_string(idx) +
                            " outside logit vector of size " + std::to_string(logits.size()));
    }
    phi.push_back(sigmoid(logits[idx]));
  }
  return phi;
}

}  // namespace slmfuse
