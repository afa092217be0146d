#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stam/error.hpp"
#include "stam/rng.hpp"
#include "stam/tensor.hpp"

namespace stam {

enum class Mode { train, eval };

template <typename S>
struct BnBatchStats {
  Tensor<S> mean;  // (C)
  Tensor<S> var;   // (C), biased
};

/// Reverse-mode tape over dense tensors.
///
/// Activations inside the clip encoder use the layout (channels, clips, time,
/// joints) so that adjacency mixing, channel maps, and temporal convolutions
/// each reduce to one GEMM. Ops cover exactly the shapes the model needs; a
/// tape is built per forward pass and discarded after backward.
template <typename S>
class Tape {
 public:
  using VarId = std::int32_t;

  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using CMatMap = Eigen::Map<const Mat>;

  VarId input(Tensor<S> value, bool needs_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, nullptr, needs_grad});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  const Tensor<S>& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<S>& value(VarId id) { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Gradient of a node; zeros if nothing flowed into it.
  Tensor<S> grad(VarId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) return Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  bool has_grad(VarId id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  /// Reverse sweep from a scalar node. `seed` scales the whole gradient,
  /// which is how batch-mean weighting is applied per example.
  void backward(VarId root, S seed = S(1)) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    require(r.value.numel() == 1, Errc::shape_mismatch, "backward root must be scalar");
    ensure_grad(root)[0] = seed;
    for (VarId i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.needs_grad && !n.grad.empty()) n.backward();
    }
  }

  // -- elementwise ----------------------------------------------------------

  VarId add(VarId a, VarId b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    require(va.same_shape(vb), Errc::shape_mismatch,
            "add: " + va.shape_str() + " vs " + vb.shape_str());
    Tensor<S> out(va.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    return make(std::move(out), {a, b}, [this, a, b](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      accumulate(a, [&](Tensor<S>& da) {
        for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
      });
      accumulate(b, [&](Tensor<S>& db) {
        for (std::int64_t i = 0; i < g.numel(); ++i) db[i] += g[i];
      });
    });
  }

  VarId relu(VarId x) {
    const auto& vx = value(x);
    Tensor<S> out(vx.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = vx[i] > S(0) ? vx[i] : S(0);
    return make(std::move(out), {x}, [this, x](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vy = nodes_[static_cast<std::size_t>(y)].value;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < g.numel(); ++i)
          if (vy[i] > S(0)) dx[i] += g[i];
      });
    });
  }

  VarId tanh_act(VarId x) {
    const auto& vx = value(x);
    Tensor<S> out(vx.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(vx[i]);
    return make(std::move(out), {x}, [this, x](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vy = nodes_[static_cast<std::size_t>(y)].value;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * (S(1) - vy[i] * vy[i]);
      });
    });
  }

  VarId sigmoid(VarId x) {
    const auto& vx = value(x);
    Tensor<S> out(vx.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = S(1) / (S(1) + std::exp(-vx[i]));
    return make(std::move(out), {x}, [this, x](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vy = nodes_[static_cast<std::size_t>(y)].value;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * vy[i] * (S(1) - vy[i]);
      });
    });
  }

  VarId reshape(VarId x, std::vector<int> shape) {
    const auto& vx = value(x);
    require(Tensor<S>::numel_of(shape) == vx.numel(), Errc::shape_mismatch, "reshape numel");
    Tensor<S> out(std::move(shape), vx.data);
    return make(std::move(out), {x}, [this, x](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
      });
    });
  }

  // -- graph / linear ops ---------------------------------------------------

  /// Mixes the trailing joint axis with a constant matrix: treating x as
  /// (rows, M), returns x * adj. Used with the normalized adjacency.
  VarId adjacency_mix(VarId x, const Tensor<S>& adj) {
    const auto& vx = value(x);
    require(adj.ndim() == 2 && adj.dim(0) == adj.dim(1), Errc::shape_mismatch, "adjacency shape");
    const int m = adj.dim(0);
    require(vx.ndim() >= 1 && vx.shape.back() == m, Errc::shape_mismatch,
            "adjacency_mix: joint axis mismatch");
    const std::int64_t rows = vx.numel() / m;
    Tensor<S> out(vx.shape);
    CMatMap xm(vx.ptr(), rows, m);
    CMatMap am(adj.ptr(), m, m);
    MatMap ym(out.ptr(), rows, m);
    ym.noalias() = xm * am;
    return make(std::move(out), {x}, [this, x, adj, rows, m](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      CMatMap gm(g.ptr(), rows, m);
      CMatMap am(adj.ptr(), m, m);
      accumulate(x, [&](Tensor<S>& dx) {
        MatMap dxm(dx.ptr(), rows, m);
        dxm.noalias() += gm * am.transpose();
      });
    });
  }

  /// Linear map over the leading channel axis: x is (C_in, rest...), w is
  /// (C_in, C_out); returns (C_out, rest...).
  VarId channel_map(VarId x, VarId w) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    require(vw.ndim() == 2 && vx.ndim() >= 1 && vx.dim(0) == vw.dim(0), Errc::shape_mismatch,
            "channel_map: " + vx.shape_str() + " vs w " + vw.shape_str());
    const int c_in = vw.dim(0);
    const int c_out = vw.dim(1);
    const std::int64_t rest = vx.numel() / c_in;
    std::vector<int> out_shape = vx.shape;
    out_shape[0] = c_out;
    Tensor<S> out(out_shape);
    CMatMap xm(vx.ptr(), c_in, rest);
    CMatMap wm(vw.ptr(), c_in, c_out);
    MatMap ym(out.ptr(), c_out, rest);
    ym.noalias() = wm.transpose() * xm;
    return make(std::move(out), {x, w}, [this, x, w, c_in, c_out, rest](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      CMatMap gm(g.ptr(), c_out, rest);
      CMatMap xm(value(x).ptr(), c_in, rest);
      CMatMap wm(value(w).ptr(), c_in, c_out);
      accumulate(x, [&](Tensor<S>& dx) {
        MatMap dxm(dx.ptr(), c_in, rest);
        dxm.noalias() += wm * gm;
      });
      accumulate(w, [&](Tensor<S>& dw) {
        MatMap dwm(dw.ptr(), c_in, c_out);
        dwm.noalias() += xm * gm.transpose();
      });
    });
  }

  /// Temporal convolution over the time axis with "same" zero padding and the
  /// given stride. x: (C_in, B, T, M); kernel: (C_out, C_in, kt). The output
  /// time axis has ceil(T / stride) steps.
  VarId temporal_conv(VarId x, VarId kernel, int stride) {
    const auto& vx = value(x);
    const auto& vk = value(kernel);
    require(vx.ndim() == 4, Errc::shape_mismatch, "temporal_conv input must be 4-d");
    require(vk.ndim() == 3 && vk.dim(1) == vx.dim(0), Errc::shape_mismatch,
            "temporal_conv kernel " + vk.shape_str() + " vs input " + vx.shape_str());
    require(stride >= 1, Errc::shape_mismatch, "stride must be >= 1");
    const int c_in = vx.dim(0), b = vx.dim(1), t_in = vx.dim(2), m = vx.dim(3);
    const int c_out = vk.dim(0), kt = vk.dim(2);
    require(kt % 2 == 1, Errc::shape_mismatch, "temporal kernel must be odd");
    const int t_out = (t_in + stride - 1) / stride;
    const int pad_total = std::max((t_out - 1) * stride + kt - t_in, 0);
    const int pad_left = pad_total / 2;
    const std::int64_t cols_n = static_cast<std::int64_t>(b) * t_out * m;

    Tensor<S> out({c_out, b, t_out, m});
    {
      std::vector<S>& cols = scratch();
      gather_cols(vx, cols, kt, stride, pad_left, t_out);
      CMatMap km(vk.ptr(), c_out, static_cast<std::int64_t>(c_in) * kt);
      CMatMap cm(cols.data(), static_cast<std::int64_t>(c_in) * kt, cols_n);
      MatMap ym(out.ptr(), c_out, cols_n);
      ym.noalias() = km * cm;
    }
    return make(std::move(out), {x, kernel},
                [this, x, kernel, stride, pad_left, t_out, c_in, c_out, b, t_in, m, kt,
                 cols_n](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      CMatMap gm(g.ptr(), c_out, cols_n);
      accumulate(kernel, [&](Tensor<S>& dk) {
        std::vector<S>& cols = scratch();
        gather_cols(value(x), cols, kt, stride, pad_left, t_out);
        CMatMap cm(cols.data(), static_cast<std::int64_t>(c_in) * kt, cols_n);
        MatMap dkm(dk.ptr(), c_out, static_cast<std::int64_t>(c_in) * kt);
        dkm.noalias() += gm * cm.transpose();
      });
      accumulate(x, [&](Tensor<S>& dx) {
        std::vector<S>& dcols = scratch();
        dcols.assign(static_cast<std::size_t>(static_cast<std::int64_t>(c_in) * kt * cols_n), S(0));
        CMatMap km(value(kernel).ptr(), c_out, static_cast<std::int64_t>(c_in) * kt);
        MatMap dcm(dcols.data(), static_cast<std::int64_t>(c_in) * kt, cols_n);
        dcm.noalias() = km.transpose() * gm;
        // col2im scatter-add, fixed loop order.
        for (int c = 0; c < c_in; ++c) {
          for (int dt = 0; dt < kt; ++dt) {
            const S* col_row = dcols.data() +
                               (static_cast<std::int64_t>(c) * kt + dt) * cols_n;
            for (int bi = 0; bi < b; ++bi) {
              for (int tp = 0; tp < t_out; ++tp) {
                const int src_t = tp * stride + dt - pad_left;
                if (src_t < 0 || src_t >= t_in) continue;
                S* dst = dx.ptr() +
                         ((static_cast<std::int64_t>(c) * b + bi) * t_in + src_t) * m;
                const S* src = col_row + (static_cast<std::int64_t>(bi) * t_out + tp) * m;
                for (int mi = 0; mi < m; ++mi) dst[mi] += src[mi];
              }
            }
          }
        }
      });
    });
  }

  /// Picks frames 0, stride, 2*stride, ... — the residual path of a strided
  /// layer (a 1x1 convolution's temporal sampling).
  VarId frame_subsample(VarId x, int stride) {
    if (stride == 1) return x;
    const auto& vx = value(x);
    require(vx.ndim() == 4, Errc::shape_mismatch, "frame_subsample input must be 4-d");
    const int c = vx.dim(0), b = vx.dim(1), t_in = vx.dim(2), m = vx.dim(3);
    const int t_out = (t_in + stride - 1) / stride;
    Tensor<S> out({c, b, t_out, m});
    for (int ci = 0; ci < c; ++ci)
      for (int bi = 0; bi < b; ++bi)
        for (int tp = 0; tp < t_out; ++tp) {
          const S* src = vx.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t_in + tp * stride) * m;
          S* dst = out.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t_out + tp) * m;
          std::copy(src, src + m, dst);
        }
    return make(std::move(out), {x}, [this, x, stride, c, b, t_in, t_out, m](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      accumulate(x, [&](Tensor<S>& dx) {
        for (int ci = 0; ci < c; ++ci)
          for (int bi = 0; bi < b; ++bi)
            for (int tp = 0; tp < t_out; ++tp) {
              const S* src = g.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t_out + tp) * m;
              S* dst = dx.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t_in + tp * stride) * m;
              for (int mi = 0; mi < m; ++mi) dst[mi] += src[mi];
            }
      });
    });
  }

  // -- normalization / regularization ---------------------------------------

  /// Batch normalization in training mode: per-channel statistics over all
  /// remaining axes (clips x time x joints), biased variance. The computed
  /// stats are written to *stats_out for the running-average update.
  VarId batchnorm_train(VarId x, VarId scale, VarId shift, S eps, BnBatchStats<S>* stats_out) {
    const auto& vx = value(x);
    const int c = vx.dim(0);
    check_bn_params(vx, value(scale), value(shift));
    const std::int64_t n = vx.numel() / c;
    Tensor<S> mean({c}), var({c});
    for (int ci = 0; ci < c; ++ci) {
      const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
      double sum = 0.0;
      for (std::int64_t i = 0; i < n; ++i) sum += static_cast<double>(px[i]);
      const double mu = sum / static_cast<double>(n);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(px[i]) - mu;
        sq += d * d;
      }
      mean[ci] = static_cast<S>(mu);
      var[ci] = static_cast<S>(sq / static_cast<double>(n));
    }
    if (stats_out) {
      stats_out->mean = mean;
      stats_out->var = var;
    }
    Tensor<S> inv_std({c});
    for (int ci = 0; ci < c; ++ci)
      inv_std[ci] = S(1) / std::sqrt(var[ci] + eps);

    Tensor<S> out(vx.shape);
    const auto& vscale = value(scale);
    const auto& vshift = value(shift);
    for (int ci = 0; ci < c; ++ci) {
      const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
      S* py = out.ptr() + static_cast<std::int64_t>(ci) * n;
      const S a = vscale[ci] * inv_std[ci];
      const S bshift = vshift[ci] - a * mean[ci];
      for (std::int64_t i = 0; i < n; ++i) py[i] = a * px[i] + bshift;
    }
    return make(std::move(out), {x, scale, shift},
                [this, x, scale, shift, mean, inv_std, c, n](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vx = value(x);
      const auto& vscale = value(scale);
      std::vector<double> sum_g(static_cast<std::size_t>(c)), sum_gx(static_cast<std::size_t>(c));
      for (int ci = 0; ci < c; ++ci) {
        const S* pg = g.ptr() + static_cast<std::int64_t>(ci) * n;
        const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double xhat = (static_cast<double>(px[i]) - static_cast<double>(mean[ci])) *
                              static_cast<double>(inv_std[ci]);
          s1 += static_cast<double>(pg[i]);
          s2 += static_cast<double>(pg[i]) * xhat;
        }
        sum_g[static_cast<std::size_t>(ci)] = s1;
        sum_gx[static_cast<std::size_t>(ci)] = s2;
      }
      accumulate(x, [&](Tensor<S>& dx) {
        for (int ci = 0; ci < c; ++ci) {
          const S* pg = g.ptr() + static_cast<std::int64_t>(ci) * n;
          const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
          S* pdx = dx.ptr() + static_cast<std::int64_t>(ci) * n;
          const double a = static_cast<double>(vscale[ci]) * static_cast<double>(inv_std[ci]);
          const double mg = sum_g[static_cast<std::size_t>(ci)] / static_cast<double>(n);
          const double mgx = sum_gx[static_cast<std::size_t>(ci)] / static_cast<double>(n);
          for (std::int64_t i = 0; i < n; ++i) {
            const double xhat = (static_cast<double>(px[i]) - static_cast<double>(mean[ci])) *
                                static_cast<double>(inv_std[ci]);
            pdx[i] += static_cast<S>(a * (static_cast<double>(pg[i]) - mg - xhat * mgx));
          }
        }
      });
      accumulate(scale, [&](Tensor<S>& ds) {
        for (int ci = 0; ci < c; ++ci) ds[ci] += static_cast<S>(sum_gx[static_cast<std::size_t>(ci)]);
      });
      accumulate(shift, [&](Tensor<S>& dsh) {
        for (int ci = 0; ci < c; ++ci) dsh[ci] += static_cast<S>(sum_g[static_cast<std::size_t>(ci)]);
      });
    });
  }

  /// Batch normalization with frozen running statistics (eval mode): a pure
  /// per-channel affine map.
  VarId batchnorm_eval(VarId x, VarId scale, VarId shift, const Tensor<S>& running_mean,
                       const Tensor<S>& running_var, S eps) {
    const auto& vx = value(x);
    const int c = vx.dim(0);
    check_bn_params(vx, value(scale), value(shift));
    require(running_mean.numel() == c && running_var.numel() == c, Errc::shape_mismatch,
            "running stats shape");
    const std::int64_t n = vx.numel() / c;
    Tensor<S> inv_std({c});
    for (int ci = 0; ci < c; ++ci) inv_std[ci] = S(1) / std::sqrt(running_var[ci] + eps);

    Tensor<S> out(vx.shape);
    const auto& vscale = value(scale);
    const auto& vshift = value(shift);
    for (int ci = 0; ci < c; ++ci) {
      const S a = vscale[ci] * inv_std[ci];
      const S bshift = vshift[ci] - a * running_mean[ci];
      const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
      S* py = out.ptr() + static_cast<std::int64_t>(ci) * n;
      for (std::int64_t i = 0; i < n; ++i) py[i] = a * px[i] + bshift;
    }
    return make(std::move(out), {x, scale, shift},
                [this, x, scale, shift, running_mean, inv_std, c, n](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vx = value(x);
      const auto& vscale = value(scale);
      accumulate(x, [&](Tensor<S>& dx) {
        for (int ci = 0; ci < c; ++ci) {
          const S a = vscale[ci] * inv_std[ci];
          const S* pg = g.ptr() + static_cast<std::int64_t>(ci) * n;
          S* pdx = dx.ptr() + static_cast<std::int64_t>(ci) * n;
          for (std::int64_t i = 0; i < n; ++i) pdx[i] += a * pg[i];
        }
      });
      accumulate(scale, [&](Tensor<S>& ds) {
        for (int ci = 0; ci < c; ++ci) {
          const S* pg = g.ptr() + static_cast<std::int64_t>(ci) * n;
          const S* px = vx.ptr() + static_cast<std::int64_t>(ci) * n;
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i)
            s += static_cast<double>(pg[i]) *
                 (static_cast<double>(px[i]) - static_cast<double>(running_mean[ci])) *
                 static_cast<double>(inv_std[ci]);
          ds[ci] += static_cast<S>(s);
        }
      });
      accumulate(shift, [&](Tensor<S>& dsh) {
        for (int ci = 0; ci < c; ++ci) {
          const S* pg = g.ptr() + static_cast<std::int64_t>(ci) * n;
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(pg[i]);
          dsh[ci] += static_cast<S>(s);
        }
      });
    });
  }

  /// Inverted dropout with a counter-based mask so masks depend only on the
  /// key, never on evaluation order. rate == 0 is the identity.
  VarId dropout(VarId x, S rate, std::uint64_t key) {
    require(rate >= S(0) && rate < S(1), Errc::config_invalid, "dropout rate must be in [0,1)");
    if (rate == S(0)) return x;
    const auto& vx = value(x);
    Tensor<S> out(vx.shape);
    const S keep_scale = S(1) / (S(1) - rate);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      const bool keep = counter_uniform(key, static_cast<std::uint64_t>(i)) >= static_cast<double>(rate);
      out[i] = keep ? vx[i] * keep_scale : S(0);
    }
    return make(std::move(out), {x}, [this, x, rate, key, keep_scale](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const bool keep =
              counter_uniform(key, static_cast<std::uint64_t>(i)) >= static_cast<double>(rate);
          if (keep) dx[i] += g[i] * keep_scale;
        }
      });
    });
  }

  // -- pooling / attention --------------------------------------------------

  /// Mean over the time axis: (C, B, T, M) -> (C, B, M).
  VarId avgpool_time(VarId x) {
    const auto& vx = value(x);
    require(vx.ndim() == 4, Errc::shape_mismatch, "avgpool_time input must be 4-d");
    const int c = vx.dim(0), b = vx.dim(1), t = vx.dim(2), m = vx.dim(3);
    Tensor<S> out({c, b, m});
    const S inv_t = S(1) / static_cast<S>(t);
    for (int ci = 0; ci < c; ++ci)
      for (int bi = 0; bi < b; ++bi) {
        S* dst = out.ptr() + (static_cast<std::int64_t>(ci) * b + bi) * m;
        for (int ti = 0; ti < t; ++ti) {
          const S* src = vx.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t + ti) * m;
          for (int mi = 0; mi < m; ++mi) dst[mi] += src[mi];
        }
        for (int mi = 0; mi < m; ++mi) dst[mi] *= inv_t;
      }
    return make(std::move(out), {x}, [this, x, c, b, t, m, inv_t](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      accumulate(x, [&](Tensor<S>& dx) {
        for (int ci = 0; ci < c; ++ci)
          for (int bi = 0; bi < b; ++bi) {
            const S* src = g.ptr() + (static_cast<std::int64_t>(ci) * b + bi) * m;
            for (int ti = 0; ti < t; ++ti) {
              S* dst = dx.ptr() + ((static_cast<std::int64_t>(ci) * b + bi) * t + ti) * m;
              for (int mi = 0; mi < m; ++mi) dst[mi] += src[mi] * inv_t;
            }
          }
      });
    });
  }

  /// Softmax over the last axis, independently per leading index. The
  /// normalizer is accumulated in double so the outputs sum to 1 tightly
  /// even in float mode.
  VarId softmax_last(VarId x) {
    const auto& vx = value(x);
    const int l = vx.shape.back();
    const std::int64_t groups = vx.numel() / l;
    Tensor<S> out(vx.shape);
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const S* px = vx.ptr() + gi * l;
      S* py = out.ptr() + gi * l;
      S mx = px[0];
      for (int i = 1; i < l; ++i) mx = std::max(mx, px[i]);
      double sum = 0.0;
      for (int i = 0; i < l; ++i) {
        py[i] = std::exp(px[i] - mx);
        sum += static_cast<double>(py[i]);
      }
      const double inv = 1.0 / sum;
      for (int i = 0; i < l; ++i) py[i] = static_cast<S>(static_cast<double>(py[i]) * inv);
    }
    return make(std::move(out), {x}, [this, x, l, groups](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vy = nodes_[static_cast<std::size_t>(y)].value;
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t gi = 0; gi < groups; ++gi) {
          const S* pg = g.ptr() + gi * l;
          const S* py = vy.ptr() + gi * l;
          S* pdx = dx.ptr() + gi * l;
          double dot = 0.0;
          for (int i = 0; i < l; ++i) dot += static_cast<double>(pg[i]) * static_cast<double>(py[i]);
          for (int i = 0; i < l; ++i)
            pdx[i] += static_cast<S>(static_cast<double>(py[i]) *
                                     (static_cast<double>(pg[i]) - dot));
        }
      });
    });
  }

  /// Weighted pooling over the trailing axis: x (C, G, N) with weights
  /// (G, N) -> (C, G). Stands in for both attention aggregations.
  VarId weighted_pool(VarId x, VarId weights) {
    const auto& vx = value(x);
    const auto& vw = value(weights);
    require(vx.ndim() == 3 && vw.ndim() == 2 && vx.dim(1) == vw.dim(0) && vx.dim(2) == vw.dim(1),
            Errc::shape_mismatch,
            "weighted_pool: " + vx.shape_str() + " vs " + vw.shape_str());
    const int c = vx.dim(0), gcount = vx.dim(1), n = vx.dim(2);
    Tensor<S> out({c, gcount});
    for (int ci = 0; ci < c; ++ci)
      for (int gi = 0; gi < gcount; ++gi) {
        const S* px = vx.ptr() + (static_cast<std::int64_t>(ci) * gcount + gi) * n;
        const S* pw = vw.ptr() + static_cast<std::int64_t>(gi) * n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += static_cast<double>(px[i]) * static_cast<double>(pw[i]);
        out[static_cast<std::int64_t>(ci) * gcount + gi] = static_cast<S>(acc);
      }
    return make(std::move(out), {x, weights}, [this, x, weights, c, gcount, n](VarId y) {
      const auto& g = nodes_[static_cast<std::size_t>(y)].grad;
      const auto& vx = value(x);
      const auto& vw = value(weights);
      accumulate(x, [&](Tensor<S>& dx) {
        for (int ci = 0; ci < c; ++ci)
          for (int gi = 0; gi < gcount; ++gi) {
            const S gy = g[static_cast<std::int64_t>(ci) * gcount + gi];
            const S* pw = vw.ptr() + static_cast<std::int64_t>(gi) * n;
            S* pdx = dx.ptr() + (static_cast<std::int64_t>(ci) * gcount + gi) * n;
            for (int i = 0; i < n; ++i) pdx[i] += gy * pw[i];
          }
      });
      accumulate(weights, [&](Tensor<S>& dw) {
        for (int gi = 0; gi < gcount; ++gi) {
          S* pdw = dw.ptr() + static_cast<std::int64_t>(gi) * n;
          for (int ci = 0; ci < c; ++ci) {
            const S gy = g[static_cast<std::int64_t>(ci) * gcount + gi];
            const S* px = vx.ptr() + (static_cast<std::int64_t>(ci) * gcount + gi) * n;
            for (int i = 0; i < n; ++i) pdw[i] += gy * px[i];
          }
        }
      });
    });
  }

  /// Scalar head: w . x + b with x and w of equal length, b scalar.
  VarId affine_scalar(VarId x, VarId w, VarId b) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    require(vx.numel() == vw.numel() && vb.numel() == 1, Errc::shape_mismatch,
            "affine_scalar shapes");
    double acc = static_cast<double>(vb[0]);
    for (std::int64_t i = 0; i < vx.numel(); ++i)
      acc += static_cast<double>(vx[i]) * static_cast<double>(vw[i]);
    Tensor<S> out({1});
    out[0] = static_cast<S>(acc);
    return make(std::move(out), {x, w, b}, [this, x, w, b](VarId y) {
      const S gy = nodes_[static_cast<std::size_t>(y)].grad[0];
      const auto& vx = value(x);
      const auto& vw = value(w);
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy * vw[i];
      });
      accumulate(w, [&](Tensor<S>& dw) {
        for (std::int64_t i = 0; i < dw.numel(); ++i) dw[i] += gy * vx[i];
      });
      accumulate(b, [&](Tensor<S>& db) { db[0] += gy; });
    });
  }

  // -- losses ---------------------------------------------------------------

  /// Mean binary cross-entropy over predictions already in (0,1); log
  /// arguments are clamped at 1e-7. Optional per-element weights produce a
  /// weighted mean.
  VarId bce(VarId yhat, const std::vector<S>& labels, const std::vector<S>& weights = {}) {
    const auto& vy = value(yhat);
    require(static_cast<std::size_t>(vy.numel()) == labels.size(), Errc::length_mismatch,
            "predictions and labels differ in length");
    require(weights.empty() || weights.size() == labels.size(), Errc::length_mismatch,
            "weights length");
    const std::int64_t n = vy.numel();
    const double eps = 1e-7;
    double wsum = 0.0, acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double w = weights.empty() ? 1.0 : static_cast<double>(weights[static_cast<std::size_t>(i)]);
      const double p = static_cast<double>(vy[i]);
      const double y = static_cast<double>(labels[static_cast<std::size_t>(i)]);
      acc += w * -(y * std::log(std::max(p, eps)) + (1.0 - y) * std::log(std::max(1.0 - p, eps)));
      wsum += w;
    }
    Tensor<S> out({1});
    out[0] = static_cast<S>(acc / wsum);
    return make(std::move(out), {yhat}, [this, yhat, labels, weights, n, wsum, eps](VarId y) {
      const S gy = nodes_[static_cast<std::size_t>(y)].grad[0];
      const auto& vy = value(yhat);
      accumulate(yhat, [&](Tensor<S>& dp) {
        for (std::int64_t i = 0; i < n; ++i) {
          const double w = weights.empty() ? 1.0 : static_cast<double>(weights[static_cast<std::size_t>(i)]);
          const double p = static_cast<double>(vy[i]);
          const double lab = static_cast<double>(labels[static_cast<std::size_t>(i)]);
          double d = 0.0;
          if (p > eps) d -= lab / p;
          if (1.0 - p > eps) d += (1.0 - lab) / (1.0 - p);
          dp[i] += static_cast<S>(static_cast<double>(gy) * (w / wsum) * d);
        }
      });
    });
  }

  /// Sum of squared differences against a constant target; test utility.
  VarId squared_error_sum(VarId x, const Tensor<S>& target) {
    const auto& vx = value(x);
    require(vx.same_shape(target), Errc::shape_mismatch, "squared_error_sum shapes");
    double acc = 0.0;
    for (std::int64_t i = 0; i < vx.numel(); ++i) {
      const double d = static_cast<double>(vx[i]) - static_cast<double>(target[i]);
      acc += d * d;
    }
    Tensor<S> out({1});
    out[0] = static_cast<S>(acc);
    return make(std::move(out), {x}, [this, x, target](VarId y) {
      const S gy = nodes_[static_cast<std::size_t>(y)].grad[0];
      const auto& vx = value(x);
      accumulate(x, [&](Tensor<S>& dx) {
        for (std::int64_t i = 0; i < dx.numel(); ++i)
          dx[i] += gy * S(2) * (vx[i] - target[i]);
      });
    });
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;

  static std::vector<S>& scratch() {
    static thread_local std::vector<S> buf;
    return buf;
  }

  Tensor<S>& ensure_grad(VarId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  template <typename Fn>
  void accumulate(VarId id, Fn&& fn) {
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
    fn(ensure_grad(id));
  }

  template <typename BackFn>
  VarId make(Tensor<S> value, std::initializer_list<VarId> inputs, BackFn&& back) {
    bool needs = false;
    for (VarId in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
    Node node{std::move(value), Tensor<S>{}, nullptr, needs};
    nodes_.push_back(std::move(node));
    const VarId id = static_cast<VarId>(nodes_.size() - 1);
    if (needs)
      nodes_[static_cast<std::size_t>(id)].backward = [this, id, back = std::forward<BackFn>(back)]() {
        back(id);
      };
    return id;
  }

  void gather_cols(const Tensor<S>& x, std::vector<S>& cols, int kt, int stride, int pad_left,
                   int t_out) const {
    const int c_in = x.dim(0), b = x.dim(1), t_in = x.dim(2), m = x.dim(3);
    const std::int64_t n = static_cast<std::int64_t>(b) * t_out * m;
    cols.assign(static_cast<std::size_t>(static_cast<std::int64_t>(c_in) * kt * n), S(0));
    for (int c = 0; c < c_in; ++c) {
      for (int dt = 0; dt < kt; ++dt) {
        S* row = cols.data() + (static_cast<std::int64_t>(c) * kt + dt) * n;
        for (int bi = 0; bi < b; ++bi) {
          for (int tp = 0; tp < t_out; ++tp) {
            const int src_t = tp * stride + dt - pad_left;
            if (src_t < 0 || src_t >= t_in) continue;
            const S* src = x.ptr() + ((static_cast<std::int64_t>(c) * b + bi) * t_in + src_t) * m;
            std::copy(src, src + m, row + (static_cast<std::int64_t>(bi) * t_out + tp) * m);
          }
        }
      }
    }
  }

  static void check_bn_params(const Tensor<S>& x, const Tensor<S>& scale, const Tensor<S>& shift) {
    require(x.ndim() >= 1, Errc::shape_mismatch, "batchnorm input rank");
    require(scale.numel() == x.dim(0) && shift.numel() == x.dim(0), Errc::shape_mismatch,
            "batchnorm parameter shape");
  }
};

}  // namespace stam
