#include "slmfuse/projector.hpp"

#include <cmath>

#include "slmfuse/error.hpp"
#include "slmfuse/rng.hpp"

namespace slmfuse {

void validate(const ProjectorConfig& c) {
  if (c.embed_dim == 0) throw ValidationError("projector embedding dim must be positive");
  if (c.token_dim <= c.embed_dim) {
    throw ValidationError("projector is not overcomplete: token dim " +
                          std::to_string(c.token_dim) + " <= embedding dim " +
                          std::to_string(c.embed_dim));
  }
}

ProjectorNames ProjectorNames::with_prefix(const std::string& prefix) {
  const std::string p = prefix.empty() ? "" : prefix + "/";
  return {p + "enc_w", p + "enc_b", p + "dec_w", p + "dec_b"};
}

void add_projector(ParamSet& params, const std::string& prefix, const ProjectorConfig& config,
                   std::uint64_t seed) {
  validate(config);
  const auto names = ProjectorNames::with_prefix(prefix);
  Rng rng(seed);
  auto uniform_matrix = [&rng](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w = Tensor::matrix(rows, cols);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    return w;
  };
  params.add(names.enc_w, uniform_matrix(config.token_dim, config.embed_dim, config.embed_dim));
  params.add(names.enc_b, Tensor::matrix(1, config.token_dim), false);
  params.add(names.dec_w, uniform_matrix(config.embed_dim, config.token_dim, config.token_dim));
  params.add(names.dec_b, Tensor::matrix(1, config.embed_dim), false);
}

ParamSet init_projector(const ProjectorConfig& config, std::uint64_t seed) {
  ParamSet p;
  add_projector(p, "", config, seed);
  return p;
}

namespace {

// out = W x + b with W rows x cols.
std::vector<double> affine(const Tensor& w, const Tensor& b, std::span<const double> x,
                           const char* what) {
  if (x.size() != w.cols()) {
    throw ValidationError(std::string(what) + ": input has dim " + std::to_string(x.size()) +
                          ", expected " + std::to_string(w.cols()));
  }
  std::vector<double> out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) acc += w.at(i, j) * x[j];
    out[i] = acc + b[i];
  }
  return out;
}

}  // namespace

std::vector<double> project(const ParamSet& params, std::span<const double> embedding,
                            const std::string& prefix) {
  const auto n = ProjectorNames::with_prefix(prefix);
  std::vector<double> t = affine(params.value(n.enc_w), params.value(n.enc_b), embedding, "project");
  for (double& v : t) v = std::tanh(v);
  return t;
}

std::vector<double> reconstruct(const ParamSet& params, std::span<const double> token,
                                const std::string& prefix) {
  const auto n = ProjectorNames::with_prefix(prefix);
  return affine(params.value(n.dec_w), params.value(n.dec_b), token, "reconstruct");
}

Var project(Graph& g, ParamSet& params, Var embedding, const std::string& prefix) {
  const auto n = ProjectorNames::with_prefix(prefix);
  return ad::tanh(ad::matmul_bt(embedding, g.param(params, n.enc_w)) + g.param(params, n.enc_b));
}

Var reconstruct(Graph& g, ParamSet& params, Var token, const std::string& prefix) {
  const auto n = ProjectorNames::with_prefix(prefix);
  return ad::matmul_bt(token, g.param(params, n.dec_w)) + g.param(params, n.dec_b);
}

}  // namespace slmfuse
