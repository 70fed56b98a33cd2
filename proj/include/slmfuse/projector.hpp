#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/autodiff.hpp"

namespace slmfuse {

/// Overcomplete autoencoder widths: embedding dim -> token dim -> embedding dim.
struct ProjectorConfig {
  std::size_t embed_dim = 0;
  std::size_t token_dim = 0;
};

void validate(const ProjectorConfig& config);

/// Parameter names of one projector inside a ParamSet, e.g. "xr/enc_w".
struct ProjectorNames {
  std::string enc_w, enc_b, dec_w, dec_b;
  static ProjectorNames with_prefix(const std::string& prefix);
};

/// Adds encoder weight (token x embed), encoder bias, decoder weight
/// (embed x token) and decoder bias. Weights are uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero and exempt from decay.
void add_projector(ParamSet& params, const std::string& prefix, const ProjectorConfig& config,
                   std::uint64_t seed);
ParamSet init_projector(const ProjectorConfig& config, std::uint64_t seed);

/// t = tanh(W_enc e + b_enc)
std::vector<double> project(const ParamSet& params, std::span<const double> embedding,
                            const std::string& prefix = "");
/// e_hat = W_dec t + b_dec
std::vector<double> reconstruct(const ParamSet& params, std::span<const double> token,
                                const std::string& prefix = "");

// Graph forms; `embedding` / `token` are 1 x dim rows.
Var project(Graph& g, ParamSet& params, Var embedding, const std::string& prefix = "");
Var reconstruct(Graph& g, ParamSet& params, Var token, const std::string& prefix = "");

}  // namespace slmfuse
