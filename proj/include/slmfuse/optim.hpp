#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "slmfuse/autodiff.hpp"

namespace slmfuse {

struct AdamWConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 3e-4;
};

/// First/second moment accumulators for every parameter of one ParamSet.
struct OptimState {
  OptimState() = default;
  OptimState(const ParamSet& params, AdamWConfig config);

  AdamWConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// Bias-corrected Adam with decoupled weight decay on parameters flagged for
/// decay. Zeroes the gradient buffers afterwards.
void adamw_step(ParamSet& params, OptimState& state);

}  // namespace slmfuse
