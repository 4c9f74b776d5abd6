#include "pcgan/adam.hpp"

#include <cmath>

#include "pcgan/error.hpp"

namespace pcgan {

void adam_step(Network& net, const GradMap& grads, AdamState& state) {
  for (const auto& [name, p] : net.params()) {
    if (!net.param_trainable(name)) continue;
    auto it = grads.find(name);
    if (it == grads.end()) throw UsageError("missing gradient for trainable parameter " + name);
    if (it->second.shape() != p.shape()) throw DimensionError("gradient shape mismatch for " + name);
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double t = double(state.step);
  const float bias1 = float(1.0 - std::pow(double(c.beta1), t));
  const float bias2 = float(1.0 - std::pow(double(c.beta2), t));
  for (auto& [name, p] : net.params()) {
    if (!net.param_trainable(name)) continue;
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.try_emplace(name, p.shape(), 0.0f).first->second;
    Tensor& v = state.v.try_emplace(name, p.shape(), 0.0f).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * g[i] * g[i];
      const float m_hat = m[i] / bias1;
      const float v_hat = v[i] / bias2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace pcgan
