#include "cmkl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmkl/rng.hpp"

namespace cmkl {

GradCheckReport grad_check(const std::function<double(const ModelState&)>& loss_fn,
                           ModelState params, const GradientSet& analytic,
                           const GradCheckOptions& options) {
  if (analytic.grads.size() != params.tensors().size()) {
    throw std::invalid_argument("grad_check: gradient slot count mismatch");
  }
  GradCheckReport report;
  for (std::size_t slot = 0; slot < params.tensors().size(); ++slot) {
    NamedTensor& nt = params.tensors()[slot];
    const Tensor& g = analytic.grads[slot];

    std::vector<std::size_t> coords;
    std::size_t n = nt.value.numel();
    if (options.max_coords_per_tensor == 0 || n <= options.max_coords_per_tensor) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng(derive_seed(options.seed, nt.name, slot));
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      rng.shuffle(all);
      coords.assign(all.begin(), all.begin() + options.max_coords_per_tensor);
    }

    TensorCheckReport tr;
    tr.group = nt.group;
    tr.name = nt.name;
    tr.coords_checked = coords.size();
    for (std::size_t c : coords) {
      double saved = nt.value.data[c];
      nt.value.data[c] = saved + options.h;
      double up = loss_fn(params);
      nt.value.data[c] = saved - options.h;
      double down = loss_fn(params);
      nt.value.data[c] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("grad_check: non-finite loss while perturbing " + nt.name);
      }
      double numeric = (up - down) / (2.0 * options.h);
      double a = g.data[c];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      tr.max_rel_error = std::max(tr.max_rel_error, rel);
    }
    tr.passed = tr.max_rel_error < options.tol;
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.passed = report.passed && tr.passed;
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

GradCheckReport grad_check(const std::function<double(const ModelState&)>& loss_fn,
                           const std::function<GradientSet(const ModelState&)>& grad_fn,
                           const ModelState& params, const GradCheckOptions& options) {
  GradientSet analytic = grad_fn(params);
  return grad_check(loss_fn, params, analytic, options);
}

}  // namespace cmkl
