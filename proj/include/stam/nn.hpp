#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stam/autodiff.hpp"
#include "stam/rng.hpp"
#include "stam/tensor.hpp"

namespace stam {

template <typename S>
void glorot_uniform(Tensor<S>& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
struct BatchNormParams {
  Tensor<S> scale, shift;               // trainable
  Tensor<S> running_mean, running_var;  // state, used in eval mode

  void init(int channels) {
    scale = Tensor<S>::full({channels}, S(1));
    shift = Tensor<S>::zeros({channels});
    running_mean = Tensor<S>::zeros({channels});
    running_var = Tensor<S>::full({channels}, S(1));
  }

  void update_running(const BnBatchStats<S>& stats, double momentum) {
    for (std::int64_t i = 0; i < running_mean.numel(); ++i) {
      running_mean[i] = static_cast<S>((1.0 - momentum) * static_cast<double>(running_mean[i]) +
                                       momentum * static_cast<double>(stats.mean[i]));
      running_var[i] = static_cast<S>((1.0 - momentum) * static_cast<double>(running_var[i]) +
                                      momentum * static_cast<double>(stats.var[i]));
    }
  }
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// One spatio-temporal layer: graph convolution per frame, batch-norm + ReLU,
/// temporal convolution (kernel (t_kernel, 1), stride (t_stride, 1), "same"
/// padding), batch-norm + dropout, plus a residual path. The residual is the
/// identity when the channel count is preserved at stride 1, otherwise a 1x1
/// convolution with the layer stride.
template <typename S>
struct StgcnLayerParams {
  Tensor<S> gcn_weight;       // (d_in, d_out)
  Tensor<S> temporal_kernel;  // (d_out, d_out, t_kernel)
  Tensor<S> residual_kernel;  // (d_in, d_out); empty means identity bypass
  BatchNormParams<S> bn_pre, bn_post;
  int t_kernel = 9;
  int t_stride = 1;
  S dropout_rate = S(0.3);

  bool residual_identity() const { return residual_kernel.empty(); }

  void init(int d_in, int d_out, int kernel, int stride, S dropout, Rng& rng) {
    require(kernel % 2 == 1, Errc::config_invalid, "temporal kernel must be odd");
    require(stride >= 1, Errc::config_invalid, "temporal stride must be >= 1");
    require(dropout >= S(0) && dropout < S(1), Errc::config_invalid, "dropout rate in [0,1)");
    t_kernel = kernel;
    t_stride = stride;
    dropout_rate = dropout;
    gcn_weight = Tensor<S>({d_in, d_out});
    glorot_uniform(gcn_weight, d_in, d_out, rng);
    temporal_kernel = Tensor<S>({d_out, d_out, kernel});
    glorot_uniform(temporal_kernel, d_out * kernel, d_out * kernel, rng);
    if (d_in == d_out && stride == 1) {
      residual_kernel = Tensor<S>{};
    } else {
      residual_kernel = Tensor<S>({d_in, d_out});
      glorot_uniform(residual_kernel, d_in, d_out, rng);
    }
    bn_pre.init(d_out);
    bn_post.init(d_out);
  }
};

template <typename S>
struct BnVarIds {
  typename Tape<S>::VarId scale, shift;
};

template <typename S>
struct StgcnLayerVarIds {
  typename Tape<S>::VarId gcn_weight, temporal_kernel;
  typename Tape<S>::VarId residual_kernel = -1;
  BnVarIds<S> pre, post;
};

template <typename S>
StgcnLayerVarIds<S> bind_layer(Tape<S>& tape, const StgcnLayerParams<S>& p, bool trainable) {
  StgcnLayerVarIds<S> v;
  v.gcn_weight = tape.input(p.gcn_weight, trainable);
  v.temporal_kernel = tape.input(p.temporal_kernel, trainable);
  if (!p.residual_identity()) v.residual_kernel = tape.input(p.residual_kernel, trainable);
  v.pre = {tape.input(p.bn_pre.scale, trainable), tape.input(p.bn_pre.shift, trainable)};
  v.post = {tape.input(p.bn_post.scale, trainable), tape.input(p.bn_post.shift, trainable)};
  return v;
}

template <typename S>
typename Tape<S>::VarId batchnorm(Tape<S>& tape, typename Tape<S>::VarId x,
                                  const BatchNormParams<S>& p, const BnVarIds<S>& ids, Mode mode,
                                  std::type_identity_t<std::vector<BnBatchStats<S>>*> stats) {
  if (mode == Mode::train) {
    BnBatchStats<S> s;
    auto out = tape.batchnorm_train(x, ids.scale, ids.shift, static_cast<S>(kBnEps), &s);
    if (stats) stats->push_back(std::move(s));
    return out;
  }
  return tape.batchnorm_eval(x, ids.scale, ids.shift, p.running_mean, p.running_var,
                             static_cast<S>(kBnEps));
}

/// Full layer on the tape. x: (d_in, B, T, M) -> (d_out, B, ceil(T/stride), M).
template <typename S>
typename Tape<S>::VarId stgcn_layer(Tape<S>& tape, typename Tape<S>::VarId x,
                                    const Tensor<S>& adj_norm, const StgcnLayerParams<S>& p,
                                    const StgcnLayerVarIds<S>& ids, Mode mode,
                                    std::uint64_t dropout_key,
                                    std::type_identity_t<std::vector<BnBatchStats<S>>*> stats) {
  auto h = tape.adjacency_mix(x, adj_norm);
  h = tape.channel_map(h, ids.gcn_weight);
  h = tape.relu(h);
  h = batchnorm(tape, h, p.bn_pre, ids.pre, mode, stats);
  h = tape.relu(h);
  h = tape.temporal_conv(h, ids.temporal_kernel, p.t_stride);
  h = batchnorm(tape, h, p.bn_post, ids.post, mode, stats);
  if (mode == Mode::train && p.dropout_rate > S(0)) h = tape.dropout(h, p.dropout_rate, dropout_key);

  auto res = tape.frame_subsample(x, p.t_stride);
  if (!p.residual_identity()) res = tape.channel_map(res, ids.residual_kernel);
  return tape.add(h, res);
}

/// Single-frame graph convolution: relu(adj_norm * z * w) with z (M, d_in)
/// and w (d_in, d_out). Plain function, used directly and as the reference
/// for the batched tape path.
template <typename S>
Tensor<S> gcn_forward(const Tensor<S>& adj_norm, const Tensor<S>& z, const Tensor<S>& w) {
  require(adj_norm.ndim() == 2 && adj_norm.dim(0) == adj_norm.dim(1), Errc::shape_mismatch,
          "adjacency must be square");
  require(z.ndim() == 2 && z.dim(0) == adj_norm.dim(1), Errc::shape_mismatch,
          "node features " + z.shape_str() + " do not match adjacency " + adj_norm.shape_str());
  require(w.ndim() == 2 && w.dim(0) == z.dim(1), Errc::shape_mismatch,
          "weight " + w.shape_str() + " does not match features " + z.shape_str());
  using CMap = typename Tape<S>::CMatMap;
  const int m = adj_norm.dim(0);
  Tensor<S> out({m, w.dim(1)});
  typename Tape<S>::Mat mixed =
      CMap(adj_norm.ptr(), m, m) * CMap(z.ptr(), m, z.dim(1));
  typename Tape<S>::MatMap(out.ptr(), m, w.dim(1)).noalias() =
      mixed * CMap(w.ptr(), w.dim(0), w.dim(1));
  for (auto& v : out.data) v = v > S(0) ? v : S(0);
  return out;
}

}  // namespace stam
