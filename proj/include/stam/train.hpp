#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "stam/dataset.hpp"
#include "stam/error.hpp"
#include "stam/graph.hpp"
#include "stam/metrics.hpp"
#include "stam/model.hpp"

namespace stam {

/// Optimization settings. Defaults follow the reference setup: Adam with
/// lr 1e-4 and weight decay 1e-4, 800 epochs, batch size 16, validation
/// ratio 0.2, 1000-frame sub-sequences with 200-frame overlap.
struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int epochs = 800;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double val_ratio = 0.2;
  int subseq_window = 1000;
  int subseq_overlap = 200;
  int subseq_max_count = 4;
  double threshold = 0.5;
  double pos_weight = 1.0;  // optional positive-class loss weight; 1 = off
  int threads = 4;

  void validate() const {
    require(lr > 0.0, Errc::config_invalid, "lr must be positive");
    require(weight_decay >= 0.0, Errc::config_invalid, "weight_decay must be >= 0");
    require(epochs >= 1, Errc::config_invalid, "epochs must be >= 1");
    require(batch_size >= 1, Errc::config_invalid, "batch_size must be >= 1");
    require(val_ratio > 0.0 && val_ratio < 1.0, Errc::config_invalid, "val_ratio in (0,1)");
    require(subseq_overlap >= 0 && subseq_overlap < subseq_window, Errc::config_invalid,
            "subseq_overlap must be in [0, subseq_window)");
    require(threshold > 0.0 && threshold < 1.0, Errc::config_invalid, "threshold in (0,1)");
    require(pos_weight > 0.0, Errc::config_invalid, "pos_weight must be positive");
    require(threads >= 1, Errc::config_invalid, "threads must be >= 1");
  }
};

/// Adam with L2 weight decay folded into the gradient.
template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<S>*>& params, const std::vector<Tensor<S>>& grads) {
    require(params.size() == grads.size(), Errc::length_mismatch,
            "optimizer parameter/gradient mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Tensor<S>::zeros(p->shape));
        v_.push_back(Tensor<S>::zeros(p->shape));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor<S>& theta = *params[p];
      const Tensor<S>& grad = grads[p];
      for (std::int64_t i = 0; i < theta.numel(); ++i) {
        const double g = static_cast<double>(grad[i]) +
                         weight_decay_ * static_cast<double>(theta[i]);
        const double m = beta1_ * static_cast<double>(m_[p][i]) + (1.0 - beta1_) * g;
        const double v = beta2_ * static_cast<double>(v_[p][i]) + (1.0 - beta2_) * g * g;
        m_[p][i] = static_cast<S>(m);
        v_[p][i] = static_cast<S>(v);
        theta[i] -= static_cast<S>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

  std::int64_t step_count() const { return t_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = -1.0;  // -1 when no validation set
};

struct TrainResult {
  StamParams<float> best_params;
  StamConfig config;
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_val_auc = -1.0;
};

namespace detail {

template <typename S>
std::vector<BatchNormParams<S>*> bn_list(StamParams<S>& p) {
  std::vector<BatchNormParams<S>*> out;
  for (auto& layer : p.layers) {
    out.push_back(&layer.bn_pre);
    out.push_back(&layer.bn_post);
  }
  return out;
}

struct ExampleWork {
  double loss = 0.0;
  std::vector<Tensor<float>> grads;
  std::vector<BnBatchStats<float>> bn_stats;
};

}  // namespace detail

/// Per-video prediction built from sub-sequence probabilities and voting.
template <typename S = float>
PerVideoResult predict_video_voted(const LabeledSequence& video, const StamParams<S>& params,
                                   const StamConfig& cfg, const Tensor<S>& adj_norm,
                                   int window, int overlap, int max_count, double threshold,
                                   int threads = 1) {
  PerVideoResult r;
  r.id = video.id;
  r.true_label = video.label;
  for (const auto& sub : split_subsequences(video.seq, window, overlap, max_count))
    r.subsequence_probs.push_back(predict_video(sub, params, cfg, adj_norm, threads));
  const auto vote = vote_predict(r.subsequence_probs, threshold);
  r.pred_label = vote.label;
  r.score = vote.score;
  return r;
}

/// Video-level evaluation: sub-sequence splitting, voting, ROC-AUC.
template <typename S = float>
EvalReport evaluate_videos(const std::vector<LabeledSequence>& videos,
                           const StamParams<S>& params, const StamConfig& cfg,
                           const Tensor<S>& adj_norm, const TrainConfig& tc) {
  require(!videos.empty(), Errc::empty_input, "no videos to evaluate");
  std::vector<PerVideoResult> results(videos.size());
  const int nthreads = std::max(1, std::min<int>(tc.threads, static_cast<int>(videos.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < nthreads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < videos.size();
           i += static_cast<std::size_t>(nthreads))
        results[i] = predict_video_voted(videos[i], params, cfg, adj_norm, tc.subseq_window,
                                         tc.subseq_overlap, tc.subseq_max_count, tc.threshold);
    });
  }
  for (auto& t : pool) t.join();
  return make_eval_report(std::move(results), tc.threshold);
}

/// Adam training over sub-sequences with per-epoch validation.
///
/// Batches run one example per worker thread; each example builds its own
/// tape, computes its gradient, and the reduction over the batch happens in
/// example order on the main thread, so runs are bit-reproducible for a
/// fixed seed regardless of thread count. Batch-norm statistics are
/// per-example; running statistics absorb them in example order.
///
/// The optional callback sees each epoch log; returning false stops training
/// early (the best checkpoint logic is unaffected).
inline TrainResult train(const std::vector<LabeledSequence>& train_subseqs,
                         const std::vector<LabeledSequence>& val_videos, const TrainConfig& tc,
                         const StamConfig& cfg,
                         const std::function<bool(const EpochLog&)>& on_epoch = {}) {
  tc.validate();
  cfg.validate();
  require(!train_subseqs.empty(), Errc::empty_input, "empty training set");
  {
    bool has_pos = false, has_neg = false;
    for (const auto& ex : train_subseqs) (ex.label == 1 ? has_pos : has_neg) = true;
    require(has_pos && has_neg, Errc::single_class, "training set needs both classes");
  }
  for (const auto& ex : train_subseqs)
    require(ex.seq.frames >= cfg.clip_len, Errc::too_short,
            "training example \"" + ex.id + "\" is shorter than one clip");

  const auto graph = PoseGraph<float>::build();
  StamParams<float> params = StamParams<float>::init(cfg, tc.seed);
  AdamOptimizer<float> adam(tc.lr, tc.weight_decay);

  std::vector<Tensor<float>*> param_ptrs;
  params.for_each_trainable([&](const std::string&, Tensor<float>& t) { param_ptrs.push_back(&t); });
  auto bn_params = detail::bn_list(params);

  TrainResult result;
  result.config = cfg;

  const std::size_t n = train_subseqs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(mix_keys(tc.seed, 0xe90c'0000ull + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss_num = 0.0, epoch_loss_den = 0.0;
    for (std::size_t batch_begin = 0; batch_begin < n;
         batch_begin += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t batch_end = std::min(n, batch_begin + static_cast<std::size_t>(tc.batch_size));
      const std::size_t bsize = batch_end - batch_begin;

      double weight_sum = 0.0;
      std::vector<double> weights(bsize);
      for (std::size_t i = 0; i < bsize; ++i) {
        const auto& ex = train_subseqs[order[batch_begin + i]];
        weights[i] = ex.label == 1 ? tc.pos_weight : 1.0;
        weight_sum += weights[i];
      }

      std::vector<detail::ExampleWork> work(bsize);
      const int nthreads = std::max(1, std::min<int>(tc.threads, static_cast<int>(bsize)));
      std::vector<std::thread> pool;
      for (int w = 0; w < nthreads; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = static_cast<std::size_t>(w); i < bsize;
               i += static_cast<std::size_t>(nthreads)) {
            const auto& ex = train_subseqs[order[batch_begin + i]];
            const std::uint64_t example_key =
                mix_keys(tc.seed, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(order[batch_begin + i]));
            Tape<float> tape;
            auto ids = bind_params(tape, params, true);
            auto starts = clip_starts(ex.seq.frames, cfg.clip_len, cfg.clip_overlap);
            auto fwd = stam_forward(tape, build_clip_batch<float>(ex.seq, starts, cfg.clip_len),
                                    graph.normalized, params, ids, cfg, Mode::train, example_key,
                                    &work[i].bn_stats);
            auto loss = tape.bce(fwd.yhat, {static_cast<float>(ex.label)});
            work[i].loss = static_cast<double>(tape.value(loss)[0]);
            tape.backward(loss, static_cast<float>(weights[i] / weight_sum));
            work[i].grads = collect_gradients(tape, ids, params);
          }
        });
      }
      for (auto& t : pool) t.join();

      // Fixed-order reduction keeps training bit-reproducible.
      std::vector<Tensor<float>> total;
      for (auto* p : param_ptrs) total.push_back(Tensor<float>::zeros(p->shape));
      for (std::size_t i = 0; i < bsize; ++i) {
        require(std::isfinite(work[i].loss), Errc::non_finite_loss,
                "non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss_num += weights[i] * work[i].loss;
        epoch_loss_den += weights[i];
        for (std::size_t p = 0; p < total.size(); ++p)
          for (std::int64_t e = 0; e < total[p].numel(); ++e) total[p][e] += work[i].grads[p][e];
        for (std::size_t b = 0; b < bn_params.size(); ++b)
          bn_params[b]->update_running(work[i].bn_stats[b], kBnMomentum);
      }
      adam.step(param_ptrs, total);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss_num / epoch_loss_den;
    require(std::isfinite(log.train_loss), Errc::non_finite_loss,
            "non-finite epoch loss at epoch " + std::to_string(epoch));

    if (!val_videos.empty()) {
      auto report = evaluate_videos(val_videos, params, cfg, graph.normalized, tc);
      log.val_auc = report.roc_auc;
      if (log.val_auc > result.best_val_auc) {
        result.best_val_auc = log.val_auc;
        result.best_epoch = epoch;
        result.best_params = params;
      }
    }
    result.history.push_back(log);
    if (on_epoch && !on_epoch(log)) break;
  }

  if (val_videos.empty() || result.best_epoch < 0) {
    result.best_params = params;
    result.best_epoch = result.history.empty() ? -1 : result.history.back().epoch;
  }
  return result;
}

/// Convenience pipeline: stratified video split, sub-sequence expansion of
/// the training half, then training with video-level validation.
struct PipelineResult {
  TrainResult train_result;
  SplitResult split;
  std::size_t train_subsequences = 0;
};

inline PipelineResult run_training_pipeline(const std::vector<LabeledSequence>& videos,
                                            const TrainConfig& tc, const StamConfig& cfg,
                                            const std::function<bool(const EpochLog&)>& on_epoch = {}) {
  std::vector<int> labels;
  for (const auto& v : videos) labels.push_back(v.label);
  auto split = stratified_split(labels, tc.val_ratio, tc.seed);

  std::vector<LabeledSequence> train_subseqs;
  for (auto idx : split.train_indices) {
    const auto& v = videos[idx];
    auto subs = split_subsequences(v.seq, tc.subseq_window, tc.subseq_overlap, tc.subseq_max_count);
    for (std::size_t s = 0; s < subs.size(); ++s) {
      LabeledSequence ex;
      ex.seq = std::move(subs[s]);
      ex.label = v.label;
      ex.id = v.id + "#" + std::to_string(s);
      train_subseqs.push_back(std::move(ex));
    }
  }
  std::vector<LabeledSequence> val_videos;
  for (auto idx : split.val_indices) val_videos.push_back(videos[idx]);

  PipelineResult out;
  out.split = std::move(split);
  out.train_subsequences = train_subseqs.size();
  out.train_result = train(train_subseqs, val_videos, tc, cfg, on_epoch);
  return out;
}

}  // namespace stam
