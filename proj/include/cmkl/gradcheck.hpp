#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmkl/params.hpp"

namespace cmkl {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  std::size_t max_coords_per_tensor = 30;  // 0 = every coordinate
  std::uint64_t seed = 7;
};

struct TensorCheckReport {
  Group group;
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorCheckReport> tensors;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Central-difference check of `analytic` against `loss_fn`. The loss closure
// must be deterministic; coordinates are sampled per tensor under the option
// seed. Relative error uses max(|a|,|n|,1e-8) in the denominator.
GradCheckReport grad_check(const std::function<double(const ModelState&)>& loss_fn,
                           ModelState params, const GradientSet& analytic,
                           const GradCheckOptions& options = {});

// Convenience: computes the analytic gradient with `grad_fn`, then checks it.
GradCheckReport grad_check(const std::function<double(const ModelState&)>& loss_fn,
                           const std::function<GradientSet(const ModelState&)>& grad_fn,
                           const ModelState& params, const GradCheckOptions& options = {});

}  // namespace cmkl
