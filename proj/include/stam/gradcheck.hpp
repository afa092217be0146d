#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stam/error.hpp"
#include "stam/tensor.hpp"

namespace stam {

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss` re-evaluates the scalar objective from the current parameter
/// values; `analytic_grads` returns the reverse-mode gradients aligned with
/// `params`. Parameters are perturbed in place by +/- step. Returns the
/// maximum relative error with denominator max(|analytic|, |numeric|, 1e-8).
/// Meant to run with S = double.
inline double gradient_check(const std::vector<Tensor<double>*>& params,
                             const std::function<double()>& loss,
                             const std::function<std::vector<Tensor<double>>()>& analytic_grads,
                             double step = 1e-5) {
  const auto grads = analytic_grads();
  require(grads.size() == params.size(), Errc::length_mismatch,
          "gradient count does not match parameter count");
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p];
    require(grads[p].same_shape(t), Errc::shape_mismatch, "gradient shape mismatch");
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = loss();
      t[i] = saved - step;
      const double down = loss();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads[p][i];
      require(std::isfinite(numeric) && std::isfinite(analytic), Errc::non_finite_gradient,
              "non-finite gradient during check");
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace stam
