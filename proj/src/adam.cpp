#include "cmkl/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cmkl {

AdamState AdamState::init(const ModelState& state, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  s.m.reserve(state.tensors().size());
  s.v.reserve(state.tensors().size());
  for (const NamedTensor& t : state.tensors()) {
    s.m.push_back(Tensor::zeros(t.value.shape));
    s.v.push_back(Tensor::zeros(t.value.shape));
  }
  return s;
}

void adam_step(ModelState& params, const GradientSet& grads, AdamState& state) {
  auto& tensors = params.tensors();
  if (grads.grads.size() != tensors.size() || state.m.size() != tensors.size()) {
    throw std::invalid_argument("adam_step: slot count mismatch");
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor& theta = tensors[i].value;
    const Tensor& g = grads.grads[i];
    if (!theta.same_shape(g)) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + tensors[i].name);
    }
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      double gj = g.data[j];
      if (!std::isfinite(gj)) {
        throw std::runtime_error("adam_step: non-finite gradient in " + std::string(group_name(tensors[i].group)) +
                                 "/" + tensors[i].name);
      }
      m.data[j] = state.config.beta1 * m.data[j] + (1.0 - state.config.beta1) * gj;
      v.data[j] = state.config.beta2 * v.data[j] + (1.0 - state.config.beta2) * gj * gj;
      double mhat = m.data[j] / bc1;
      double vhat = v.data[j] / bc2;
      theta.data[j] -= state.config.lr * mhat / (std::sqrt(vhat) + state.config.eps);
    }
  }
}

}  // namespace cmkl
