#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmkl/tensor.hpp"

namespace cmkl {

// The four-way parameter partition every trainable tensor belongs to.
enum class Group { Structural = 0, Text = 1, Molecular = 2, FusionDecoder = 3 };

const char* group_name(Group g);
Group group_from_name(const std::string& name);

enum class InitScheme { Zeros, Ones, Glorot };

struct TensorSpec {
  Group group;
  std::string name;
  std::vector<std::size_t> shape;
  InitScheme scheme = InitScheme::Glorot;
};

struct NamedTensor {
  Group group;
  std::string name;
  Tensor value;
};

// All trainable state, iterated in insertion order (deterministic).
class ModelState {
 public:
  Tensor& add(Group group, const std::string& name, Tensor value);
  Tensor& at(Group group, const std::string& name);
  const Tensor& at(Group group, const std::string& name) const;
  bool has(Group group, const std::string& name) const;
  std::size_t slot(Group group, const std::string& name) const;

  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::size_t total_params() const;

 private:
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;  // "group/name" -> slot
};

// Shape-matched gradient holder, same slot order as the ModelState it was
// built from.
struct GradientSet {
  std::vector<Tensor> grads;

  static GradientSet zeros_like(const ModelState& state);
  Tensor& slot(std::size_t i) { return grads[i]; }
};

// Deterministic under seed; glorot bound is sqrt(6/(fan_in+fan_out)) over the
// trailing two dims.
ModelState init_params(const std::vector<TensorSpec>& specs, std::uint64_t seed);

// Binary checkpoint: magic, version, tensor count, then per tensor the group
// tag, name, shape and row-major little-endian float64 payload.
void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

}  // namespace cmkl
