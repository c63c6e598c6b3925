#pragma once

#include <cstdint>
#include <vector>

#include "cmkl/params.hpp"

namespace cmkl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState init(const ModelState& state, const AdamConfig& config);
};

// Bias-corrected update in place. Throws on non-finite gradients, naming the
// offending tensor.
void adam_step(ModelState& params, const GradientSet& grads, AdamState& state);

}  // namespace cmkl
