#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "stam/autodiff.hpp"
#include "stam/error.hpp"
#include "stam/graph.hpp"
#include "stam/nn.hpp"
#include "stam/pose_io.hpp"
#include "stam/rng.hpp"

namespace stam {

enum class AttentionMode { none, spatial, temporal, both };

inline const char* attention_mode_name(AttentionMode m) {
  switch (m) {
    case AttentionMode::none: return "none";
    case AttentionMode::spatial: return "spatial";
    case AttentionMode::temporal: return "temporal";
    case AttentionMode::both: return "both";
  }
  return "both";
}

inline AttentionMode attention_mode_from_name(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "spatial") return AttentionMode::spatial;
  if (s == "temporal") return AttentionMode::temporal;
  if (s == "both") return AttentionMode::both;
  fail(Errc::config_invalid, "unknown attention mode \"" + s + "\"");
}

inline bool has_spatial_attention(AttentionMode m) {
  return m == AttentionMode::spatial || m == AttentionMode::both;
}
inline bool has_temporal_attention(AttentionMode m) {
  return m == AttentionMode::temporal || m == AttentionMode::both;
}

/// Architecture hyperparameters. Defaults are the reference configuration:
/// 30-frame clips with 10-frame overlap, channels 64/128/256, temporal
/// kernels 9 with strides 1/2/2, attention hidden sizes 64, dropout 0.3.
struct StamConfig {
  int clip_len = 30;
  int clip_overlap = 10;
  std::array<int, 3> channels{64, 128, 256};
  std::array<int, 3> t_kernels{9, 9, 9};
  std::array<int, 3> t_strides{1, 2, 2};
  int d_u = 64;
  int d_h = 64;
  AttentionMode attention_mode = AttentionMode::both;
  double dropout = 0.3;
  int input_channels = 7;

  int representation_dim() const { return channels[2]; }

  void validate() const {
    require(clip_len >= 1, Errc::config_invalid, "clip_len must be >= 1");
    require(clip_overlap >= 0 && clip_overlap < clip_len, Errc::config_invalid,
            "clip_overlap must be in [0, clip_len)");
    require(d_u >= 1 && d_h >= 1, Errc::config_invalid, "attention sizes must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0, Errc::config_invalid, "dropout must be in [0,1)");
    require(input_channels >= 1, Errc::config_invalid, "input_channels must be >= 1");
    for (int i = 0; i < 3; ++i) {
      require(channels[static_cast<std::size_t>(i)] >= 1, Errc::config_invalid, "channels must be >= 1");
      require(t_kernels[static_cast<std::size_t>(i)] % 2 == 1, Errc::config_invalid,
              "temporal kernels must be odd");
      require(t_strides[static_cast<std::size_t>(i)] >= 1, Errc::config_invalid,
              "temporal strides must be >= 1");
    }
  }
};

/// All learnable tensors plus batch-norm state.
template <typename S>
struct StamParams {
  std::array<StgcnLayerParams<S>, 3> layers;
  Tensor<S> spatial_proj;    // (d, d_u), stores the joint-attention projection transposed
  Tensor<S> spatial_score;   // (d_u, 1)
  Tensor<S> temporal_proj;   // (d, d_h)
  Tensor<S> temporal_score;  // (d_h, 1)
  Tensor<S> head_weight;     // (d)
  Tensor<S> head_bias;       // (1)

  static StamParams init(const StamConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    StamParams p;
    Rng rng(mix_keys(seed, 0x57a3'd00d'c0de'0001ull));
    int d_in = cfg.input_channels;
    for (int l = 0; l < 3; ++l) {
      p.layers[static_cast<std::size_t>(l)].init(
          d_in, cfg.channels[static_cast<std::size_t>(l)], cfg.t_kernels[static_cast<std::size_t>(l)],
          cfg.t_strides[static_cast<std::size_t>(l)], static_cast<S>(cfg.dropout), rng);
      d_in = cfg.channels[static_cast<std::size_t>(l)];
    }
    const int d = cfg.representation_dim();
    p.spatial_proj = Tensor<S>({d, cfg.d_u});
    glorot_uniform(p.spatial_proj, d, cfg.d_u, rng);
    p.spatial_score = Tensor<S>({cfg.d_u, 1});
    glorot_uniform(p.spatial_score, cfg.d_u, 1, rng);
    p.temporal_proj = Tensor<S>({d, cfg.d_h});
    glorot_uniform(p.temporal_proj, d, cfg.d_h, rng);
    p.temporal_score = Tensor<S>({cfg.d_h, 1});
    glorot_uniform(p.temporal_score, cfg.d_h, 1, rng);
    p.head_weight = Tensor<S>({d});
    glorot_uniform(p.head_weight, d, 1, rng);
    p.head_bias = Tensor<S>::zeros({1});
    return p;
  }

  /// Visits trainable tensors in canonical order (gradient/optimizer order).
  template <typename Fn>
  void for_each_trainable(Fn&& fn) {
    for (int l = 0; l < 3; ++l) {
      auto& lay = layers[static_cast<std::size_t>(l)];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      fn(prefix + "gcn_weight", lay.gcn_weight);
      fn(prefix + "temporal_kernel", lay.temporal_kernel);
      if (!lay.residual_identity()) fn(prefix + "residual_kernel", lay.residual_kernel);
      fn(prefix + "bn_pre.scale", lay.bn_pre.scale);
      fn(prefix + "bn_pre.shift", lay.bn_pre.shift);
      fn(prefix + "bn_post.scale", lay.bn_post.scale);
      fn(prefix + "bn_post.shift", lay.bn_post.shift);
    }
    fn("spatial_proj", spatial_proj);
    fn("spatial_score", spatial_score);
    fn("temporal_proj", temporal_proj);
    fn("temporal_score", temporal_score);
    fn("head_weight", head_weight);
    fn("head_bias", head_bias);
  }

  /// Visits non-trainable state (batch-norm running statistics).
  template <typename Fn>
  void for_each_state(Fn&& fn) {
    for (int l = 0; l < 3; ++l) {
      auto& lay = layers[static_cast<std::size_t>(l)];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      fn(prefix + "bn_pre.running_mean", lay.bn_pre.running_mean);
      fn(prefix + "bn_pre.running_var", lay.bn_pre.running_var);
      fn(prefix + "bn_post.running_mean", lay.bn_post.running_mean);
      fn(prefix + "bn_post.running_var", lay.bn_post.running_var);
    }
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for_each_trainable(fn);
    for_each_state(fn);
  }

  template <typename T>
  StamParams<T> cast() const {
    StamParams<T> out;
    auto self = const_cast<StamParams<S>*>(this);
    std::vector<Tensor<S>*> src;
    self->for_each_tensor([&](const std::string&, Tensor<S>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each_tensor([&](const std::string&, Tensor<T>& t) { t = src[i++]->template cast<T>(); });
    for (int l = 0; l < 3; ++l) {
      out.layers[static_cast<std::size_t>(l)].t_kernel = layers[static_cast<std::size_t>(l)].t_kernel;
      out.layers[static_cast<std::size_t>(l)].t_stride = layers[static_cast<std::size_t>(l)].t_stride;
      out.layers[static_cast<std::size_t>(l)].dropout_rate =
          static_cast<T>(layers[static_cast<std::size_t>(l)].dropout_rate);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Clip splitting
// ---------------------------------------------------------------------------

/// Start frames of the fixed-length clips: clip k starts at k*(len-overlap);
/// a trailing remainder shorter than one stride is dropped.
inline std::vector<int> clip_starts(int frames, int clip_len, int clip_overlap) {
  require(clip_len >= 1 && clip_overlap >= 0 && clip_overlap < clip_len, Errc::config_invalid,
          "invalid clip window");
  require(frames >= clip_len, Errc::too_short,
          "sequence of " + std::to_string(frames) + " frames is shorter than a clip (" +
              std::to_string(clip_len) + ")");
  const int stride = clip_len - clip_overlap;
  const int count = (frames - clip_len) / stride + 1;
  std::vector<int> starts(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) starts[static_cast<std::size_t>(k)] = k * stride;
  return starts;
}

inline std::vector<SequenceTensor> split_clips(const SequenceTensor& seq, int clip_len,
                                               int clip_overlap) {
  auto starts = clip_starts(seq.frames, clip_len, clip_overlap);
  std::vector<SequenceTensor> clips;
  clips.reserve(starts.size());
  for (int s : starts) {
    SequenceTensor clip(seq.joints, seq.channels, clip_len, seq.fps);
    for (int j = 0; j < seq.joints; ++j)
      for (int c = 0; c < seq.channels; ++c)
        for (int t = 0; t < clip_len; ++t) clip.at(j, c, t) = seq.at(j, c, s + t);
    clip.label = seq.label;
    clips.push_back(std::move(clip));
  }
  return clips;
}

/// Packs clips into the encoder layout (channels, clips, clip_len, joints).
template <typename S>
Tensor<S> build_clip_batch(const SequenceTensor& seq, const std::vector<int>& starts,
                           int clip_len) {
  const int m = seq.joints, c = seq.channels, k = static_cast<int>(starts.size());
  Tensor<S> out({c, k, clip_len, m});
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < k; ++ki)
      for (int t = 0; t < clip_len; ++t) {
        S* dst = out.ptr() + ((static_cast<std::int64_t>(ci) * k + ki) * clip_len + t) * m;
        const int src_t = starts[static_cast<std::size_t>(ki)] + t;
        for (int j = 0; j < m; ++j) dst[j] = static_cast<S>(seq.at(j, ci, src_t));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

template <typename S>
struct StamParamVarIds {
  std::array<StgcnLayerVarIds<S>, 3> layers;
  typename Tape<S>::VarId spatial_proj, spatial_score, temporal_proj, temporal_score;
  typename Tape<S>::VarId head_weight, head_bias;
};

template <typename S>
StamParamVarIds<S> bind_params(Tape<S>& tape, const StamParams<S>& p, bool trainable) {
  StamParamVarIds<S> ids;
  for (int l = 0; l < 3; ++l)
    ids.layers[static_cast<std::size_t>(l)] =
        bind_layer(tape, p.layers[static_cast<std::size_t>(l)], trainable);
  ids.spatial_proj = tape.input(p.spatial_proj, trainable);
  ids.spatial_score = tape.input(p.spatial_score, trainable);
  ids.temporal_proj = tape.input(p.temporal_proj, trainable);
  ids.temporal_score = tape.input(p.temporal_score, trainable);
  ids.head_weight = tape.input(p.head_weight, trainable);
  ids.head_bias = tape.input(p.head_bias, trainable);
  return ids;
}

/// Collects the per-forward gradients of the trainable tensors in canonical
/// order, matching for_each_trainable.
template <typename S>
std::vector<Tensor<S>> collect_gradients(Tape<S>& tape, const StamParamVarIds<S>& ids,
                                         StamParams<S>& params) {
  std::vector<typename Tape<S>::VarId> order;
  for (int l = 0; l < 3; ++l) {
    const auto& lv = ids.layers[static_cast<std::size_t>(l)];
    order.push_back(lv.gcn_weight);
    order.push_back(lv.temporal_kernel);
    if (!params.layers[static_cast<std::size_t>(l)].residual_identity())
      order.push_back(lv.residual_kernel);
    order.push_back(lv.pre.scale);
    order.push_back(lv.pre.shift);
    order.push_back(lv.post.scale);
    order.push_back(lv.post.shift);
  }
  order.insert(order.end(), {ids.spatial_proj, ids.spatial_score, ids.temporal_proj,
                             ids.temporal_score, ids.head_weight, ids.head_bias});
  std::vector<Tensor<S>> grads;
  grads.reserve(order.size());
  for (auto id : order) grads.push_back(tape.grad(id));
  return grads;
}

/// Clip encoder: (input_channels, K, clip_len, M) -> joint representations
/// (d, K, M). Three stacked layers, then average pooling over time.
template <typename S>
typename Tape<S>::VarId encode_clips(Tape<S>& tape, typename Tape<S>::VarId clips,
                                     const Tensor<S>& adj_norm, const StamParams<S>& params,
                                     const StamParamVarIds<S>& ids, Mode mode,
                                     std::uint64_t dropout_key,
                                     std::type_identity_t<std::vector<BnBatchStats<S>>*> stats,
                                     std::array<int, 3>* time_axis = nullptr) {
  auto h = clips;
  for (int l = 0; l < 3; ++l) {
    h = stgcn_layer(tape, h, adj_norm, params.layers[static_cast<std::size_t>(l)],
                    ids.layers[static_cast<std::size_t>(l)], mode, mix_keys(dropout_key, static_cast<std::uint64_t>(l)),
                    stats);
    if (time_axis) (*time_axis)[static_cast<std::size_t>(l)] = tape.value(h).dim(2);
  }
  return tape.avgpool_time(h);
}

template <typename S>
struct StamForward {
  typename Tape<S>::VarId z;       // (d, K, M)
  typename Tape<S>::VarId beta;    // (K, M)
  typename Tape<S>::VarId clip_repr;  // (d, K)
  typename Tape<S>::VarId alpha;   // (1, K)
  typename Tape<S>::VarId video_repr;  // (d, 1)
  typename Tape<S>::VarId logit;   // (1)
  typename Tape<S>::VarId yhat;    // (1)
};

/// Attention stages and head on top of joint representations z (d, K, M).
/// Modes without spatial (or temporal) attention use constant uniform
/// weights, which makes the aggregation an exact mean.
template <typename S>
StamForward<S> attend_and_predict(Tape<S>& tape, typename Tape<S>::VarId z,
                                  const StamParamVarIds<S>& ids, const StamConfig& cfg) {
  const auto& zv = tape.value(z);
  require(zv.ndim() == 3, Errc::shape_mismatch, "joint representations must be (d, K, M)");
  const int d = zv.dim(0), k = zv.dim(1), m = zv.dim(2);

  StamForward<S> out;
  out.z = z;
  if (has_spatial_attention(cfg.attention_mode)) {
    auto u = tape.tanh_act(tape.channel_map(z, ids.spatial_proj));      // (d_u, K, M)
    auto score = tape.channel_map(u, ids.spatial_score);                // (1, K, M)
    out.beta = tape.reshape(tape.softmax_last(score), {k, m});
  } else {
    out.beta = tape.input(Tensor<S>::full({k, m}, S(1) / static_cast<S>(m)), false);
  }
  out.clip_repr = tape.weighted_pool(z, out.beta);                      // (d, K)

  if (has_temporal_attention(cfg.attention_mode)) {
    auto h = tape.tanh_act(tape.channel_map(out.clip_repr, ids.temporal_proj));  // (d_h, K)
    auto score = tape.channel_map(h, ids.temporal_score);               // (1, K)
    out.alpha = tape.softmax_last(score);
  } else {
    out.alpha = tape.input(Tensor<S>::full({1, k}, S(1) / static_cast<S>(k)), false);
  }
  auto v3 = tape.reshape(out.clip_repr, {d, 1, k});
  out.video_repr = tape.weighted_pool(v3, out.alpha);                   // (d, 1)
  out.logit = tape.affine_scalar(out.video_repr, ids.head_weight, ids.head_bias);
  out.yhat = tape.sigmoid(out.logit);
  return out;
}

template <typename S>
StamForward<S> stam_forward(Tape<S>& tape, const Tensor<S>& clip_batch, const Tensor<S>& adj_norm,
                            const StamParams<S>& params, const StamParamVarIds<S>& ids,
                            const StamConfig& cfg, Mode mode, std::uint64_t dropout_key,
                            std::type_identity_t<std::vector<BnBatchStats<S>>*> stats = nullptr) {
  auto clips = tape.input(clip_batch, false);
  auto z = encode_clips(tape, clips, adj_norm, params, ids, mode, dropout_key, stats);
  return attend_and_predict(tape, z, ids, cfg);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Probability that the sequence is positive. Eval mode; clips can be encoded
/// on several threads (batch-norm uses frozen statistics, so chunking clips
/// is exact and the stitched result is order-independent).
template <typename S = float>
double predict_video(const SequenceTensor& seq, const StamParams<S>& params,
                     const StamConfig& cfg, const Tensor<S>& adj_norm, int threads = 1) {
  cfg.validate();
  require(seq.channels == cfg.input_channels, Errc::shape_mismatch,
          "sequence has " + std::to_string(seq.channels) + " channels, model expects " +
              std::to_string(cfg.input_channels));
  auto starts = clip_starts(seq.frames, cfg.clip_len, cfg.clip_overlap);
  const int k = static_cast<int>(starts.size());
  const int m = seq.joints;
  const int d = cfg.representation_dim();

  Tensor<S> z_all({d, k, m});
  const int nthreads = std::max(1, std::min(threads, k));
  if (nthreads == 1) {
    Tape<S> tape;
    auto ids = bind_params(tape, params, false);
    auto clips = tape.input(build_clip_batch<S>(seq, starts, cfg.clip_len), false);
    auto z = encode_clips(tape, clips, adj_norm, params, ids, Mode::eval, 0, nullptr);
    z_all = tape.value(z);
  } else {
    std::vector<std::pair<int, int>> chunks;  // [begin, end) clip ranges
    const int base = k / nthreads, extra = k % nthreads;
    int begin = 0;
    for (int i = 0; i < nthreads; ++i) {
      const int len = base + (i < extra ? 1 : 0);
      chunks.emplace_back(begin, begin + len);
      begin += len;
    }
    std::vector<Tensor<S>> partial(chunks.size());
    std::vector<std::thread> pool;
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
      pool.emplace_back([&, ci] {
        auto [b, e] = chunks[ci];
        std::vector<int> sub(starts.begin() + b, starts.begin() + e);
        Tape<S> tape;
        auto ids = bind_params(tape, params, false);
        auto clips = tape.input(build_clip_batch<S>(seq, sub, cfg.clip_len), false);
        auto z = encode_clips(tape, clips, adj_norm, params, ids, Mode::eval, 0, nullptr);
        partial[ci] = tape.value(z);
      });
    }
    for (auto& t : pool) t.join();
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
      auto [b, e] = chunks[ci];
      const int kc = e - b;
      for (int di = 0; di < d; ++di)
        for (int ki = 0; ki < kc; ++ki)
          std::copy(partial[ci].ptr() + (static_cast<std::int64_t>(di) * kc + ki) * m,
                    partial[ci].ptr() + (static_cast<std::int64_t>(di) * kc + ki + 1) * m,
                    z_all.ptr() + (static_cast<std::int64_t>(di) * k + (b + ki)) * m);
    }
  }

  Tape<S> tape;
  auto ids = bind_params(tape, params, false);
  auto z = tape.input(std::move(z_all), false);
  auto fwd = attend_and_predict(tape, z, ids, cfg);
  return static_cast<double>(tape.value(fwd.yhat)[0]);
}

// ---------------------------------------------------------------------------
// Loss and interpretation
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy of predictions in (0,1); log arguments clamped
/// at 1e-7.
inline double bce_loss(const std::vector<double>& predictions, const std::vector<int>& labels) {
  require(predictions.size() == labels.size(), Errc::length_mismatch,
          "predictions and labels differ in length");
  require(!predictions.empty(), Errc::empty_input, "no predictions");
  const double eps = 1e-7;
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = predictions[i];
    const double y = static_cast<double>(labels[i]);
    acc += -(y * std::log(std::max(p, eps)) + (1.0 - y) * std::log(std::max(1.0 - p, eps)));
  }
  return acc / static_cast<double>(predictions.size());
}

/// Joint x clip attention contributions: alpha_k * beta_{k,j} raw and
/// min-max normalized per video. Rows are joints, columns clips.
struct AttentionMap {
  int num_clips = 0;
  std::vector<double> alpha;       // (K)
  std::vector<double> beta;        // (K x M), k-major
  Tensor<double> raw;              // (M, K)
  Tensor<double> normalized;       // (M, K), in [0,1]
};

template <typename S = float>
AttentionMap explain(const SequenceTensor& seq, const StamParams<S>& params,
                     const StamConfig& cfg, const Tensor<S>& adj_norm) {
  cfg.validate();
  auto starts = clip_starts(seq.frames, cfg.clip_len, cfg.clip_overlap);
  const int k = static_cast<int>(starts.size());
  const int m = seq.joints;

  Tape<S> tape;
  auto ids = bind_params(tape, params, false);
  auto fwd = stam_forward(tape, build_clip_batch<S>(seq, starts, cfg.clip_len), adj_norm, params,
                          ids, cfg, Mode::eval, 0);

  AttentionMap map;
  map.num_clips = k;
  const auto& alpha = tape.value(fwd.alpha);
  const auto& beta = tape.value(fwd.beta);
  map.alpha.resize(static_cast<std::size_t>(k));
  map.beta.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(m));
  for (int ki = 0; ki < k; ++ki) map.alpha[static_cast<std::size_t>(ki)] = static_cast<double>(alpha[ki]);
  for (std::int64_t i = 0; i < beta.numel(); ++i) map.beta[static_cast<std::size_t>(i)] = static_cast<double>(beta[i]);

  map.raw = Tensor<double>({m, k});
  for (int j = 0; j < m; ++j)
    for (int ki = 0; ki < k; ++ki)
      map.raw[static_cast<std::int64_t>(j) * k + ki] =
          map.alpha[static_cast<std::size_t>(ki)] *
          map.beta[static_cast<std::size_t>(ki) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];

  map.normalized = Tensor<double>({m, k});
  double lo = map.raw[0], hi = map.raw[0];
  for (std::int64_t i = 0; i < map.raw.numel(); ++i) {
    lo = std::min(lo, map.raw[i]);
    hi = std::max(hi, map.raw[i]);
  }
  const double span = hi - lo;
  for (std::int64_t i = 0; i < map.raw.numel(); ++i)
    map.normalized[i] = span > 0.0 ? (map.raw[i] - lo) / span : 0.0;
  return map;
}

/// Reconstructs the prediction from the attention decomposition:
/// sigmoid(sum_{k,j} alpha_k beta_{k,j} w.z_{k,j} + b). Agreement with the
/// forward pass is a model invariant.
template <typename S>
double decomposed_prediction(const Tensor<S>& z, const Tensor<S>& alpha, const Tensor<S>& beta,
                             const Tensor<S>& head_weight, const Tensor<S>& head_bias) {
  const int d = z.dim(0), k = z.dim(1), m = z.dim(2);
  double acc = static_cast<double>(head_bias[0]);
  for (int ki = 0; ki < k; ++ki)
    for (int j = 0; j < m; ++j) {
      double dot = 0.0;
      for (int di = 0; di < d; ++di)
        dot += static_cast<double>(head_weight[di]) *
               static_cast<double>(z[(static_cast<std::int64_t>(di) * k + ki) * m + j]);
      acc += static_cast<double>(alpha[ki]) *
             static_cast<double>(beta[static_cast<std::int64_t>(ki) * m + j]) * dot;
    }
  return 1.0 / (1.0 + std::exp(-acc));
}

}  // namespace stam
