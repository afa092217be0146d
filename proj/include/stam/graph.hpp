#pragma once

#include <cmath>

#include "stam/error.hpp"
#include "stam/layout.hpp"
#include "stam/tensor.hpp"

namespace stam {

/// Binary symmetric limb adjacency with zero diagonal.
template <typename S = double>
Tensor<S> build_adjacency(const JointLayout& layout = default_joint_layout()) {
  validate_layout(layout);
  Tensor<S> a({kNumJoints, kNumJoints});
  for (auto [i, j] : layout.edges) {
    a[i * kNumJoints + j] = S(1);
    a[j * kNumJoints + i] = S(1);
  }
  return a;
}

/// Self-looped symmetric normalization: with degrees taken from A + I,
/// entry (i, j) is (A + I)_ij / sqrt(deg_i * deg_j).
template <typename S>
Tensor<S> normalize_adjacency(const Tensor<S>& a) {
  require(a.ndim() == 2 && a.dim(0) == a.dim(1), Errc::shape_mismatch,
          "adjacency must be square");
  const int n = a.dim(0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      require(a[i * n + j] >= S(0), Errc::shape_mismatch, "adjacency must be non-negative");

  std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double deg = 1.0;  // self-loop
    for (int j = 0; j < n; ++j) deg += static_cast<double>(a[i * n + j]);
    require(deg > 0.0, Errc::singular_degree, "zero degree at node " + std::to_string(i));
    inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
  }

  Tensor<S> out({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double self_looped = static_cast<double>(a[i * n + j]) + (i == j ? 1.0 : 0.0);
      // Grouping the degree product keeps the result bitwise symmetric.
      out[i * n + j] = static_cast<S>(self_looped * (inv_sqrt_deg[static_cast<std::size_t>(i)] *
                                                     inv_sqrt_deg[static_cast<std::size_t>(j)]));
    }
  }
  return out;
}

/// Skeleton graph shared by every graph convolution: raw limb adjacency and
/// its self-looped normalized form. Immutable after construction.
template <typename S = float>
struct PoseGraph {
  Tensor<S> adjacency;
  Tensor<S> normalized;

  static PoseGraph build(const JointLayout& layout = default_joint_layout()) {
    PoseGraph g;
    g.adjacency = build_adjacency<S>(layout);
    g.normalized = normalize_adjacency(g.adjacency);
    return g;
  }
};

}  // namespace stam
