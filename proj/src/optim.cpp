#include "slmfuse/optim.hpp"

#include <cmath>

#include "slmfuse/error.hpp"

namespace slmfuse {

OptimState::OptimState(const ParamSet& params, AdamWConfig cfg) : config(cfg) {
  for (const auto& [name, e] : params.entries()) {
    first_moment.emplace(name, Tensor(e.value.shape(), 0.0));
    second_moment.emplace(name, Tensor(e.value.shape(), 0.0));
  }
}

void adamw_step(ParamSet& params, OptimState& state) {
  if (!params.has_gradients()) {
    throw ValidationError("optimizer step without populated gradients");
  }
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, e] : params.entries()) {
    auto m_it = state.first_moment.find(name);
    auto v_it = state.second_moment.find(name);
    if (m_it == state.first_moment.end() || v_it == state.second_moment.end() ||
        m_it->second.size() != e.value.size()) {
      throw ValidationError("optimizer state has no moments for parameter '" + name + "'");
    }
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      double p = e.value[i];
      const double g = e.grad[i];
      if (e.decay) p -= c.learning_rate * c.weight_decay * p;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
      e.value[i] = p;
    }
    e.value.require_finite("parameter '" + name + "' after optimizer step");
  }
  params.zero_grad();
}

}  // namespace slmfuse
