#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pcgan/layers.hpp"

namespace pcgan {

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update of every trainable parameter. Frozen
/// layers are skipped entirely; a trainable parameter without a gradient
/// is a UsageError (raised before anything is modified).
void adam_step(Network& net, const GradMap& grads, AdamState& state);

}  // namespace pcgan
