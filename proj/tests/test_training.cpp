#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stam/dataset.hpp"
#include "stam/features.hpp"
#include "stam/metrics.hpp"
#include "stam/preprocess.hpp"
#include "stam/synth.hpp"
#include "stam/train.hpp"

using namespace stam;

namespace {

/// Featurized micro-corpus for optimizer smoke tests.
std::vector<LabeledSequence> micro_corpus(std::uint64_t seed, int per_class, int frames) {
  SynthConfig cfg;
  cfg.n_pos = per_class;
  cfg.n_neg = per_class;
  cfg.frames = frames;
  cfg.seed = seed;
  cfg.burst_amplitude = 0.15;
  cfg.missing_prob = 0.0;
  auto videos = generate_synthetic_dataset(cfg);
  std::vector<LabeledSequence> out;
  for (const auto& v : videos) {
    LabeledSequence item;
    item.id = v.id;
    item.label = v.label;
    item.seq = compute_motion_features(preprocess_pose(v.raw));
    item.seq.label = v.label;
    out.push_back(std::move(item));
  }
  return out;
}

StamConfig micro_model() {
  StamConfig cfg;
  cfg.clip_len = 30;
  cfg.clip_overlap = 10;
  cfg.channels = {8, 12, 16};
  cfg.t_kernels = {9, 9, 9};
  cfg.t_strides = {1, 2, 2};
  cfg.d_u = 8;
  cfg.d_h = 8;
  cfg.dropout = 0.0;  // keeps the full-batch objective smooth for the descent oracle
  return cfg;
}

TrainConfig micro_train(std::uint64_t seed, int epochs) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.subseq_window = 120;
  tc.subseq_overlap = 0;
  tc.threads = 2;
  return tc;
}

std::vector<Tensor<float>*> tensors_of(StamParams<float>& p) {
  std::vector<Tensor<float>*> out;
  p.for_each_tensor([&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
  return out;
}

}  // namespace

TEST_CASE("adam takes the textbook first step", "[training]") {
  Tensor<float> theta({1}, {1.0f});
  Tensor<float> grad({1}, {1.0f});
  AdamOptimizer<float> adam(1e-4, 0.0);
  adam.step({&theta}, {grad});
  REQUIRE(theta[0] == Catch::Approx(0.9999).margin(1e-7));
}

TEST_CASE("weight decay changes the update of any nonzero parameter", "[training]") {
  // With a zero loss gradient the only force on the parameter is decay, so
  // the two configurations must diverge after one step.
  Tensor<float> a({1}, {0.7f});
  Tensor<float> b({1}, {0.7f});
  Tensor<float> grad({1}, {0.0f});
  AdamOptimizer<float> plain(1e-4, 0.0);
  AdamOptimizer<float> decayed(1e-4, 1e-4);
  plain.step({&a}, {grad});
  decayed.step({&b}, {grad});
  REQUIRE(a[0] == 0.7f);
  REQUIRE(b[0] != 0.7f);
  REQUIRE(b[0] < 0.7f);  // decay pulls a positive parameter toward zero
}

TEST_CASE("stratified split reproduces the documented class counts", "[training]") {
  std::vector<int> labels(235, 0);
  for (int i = 0; i < 35; ++i) labels[i] = 1;  // 35 positive, 200 negative
  auto split = stratified_split(labels, 0.2, 7);
  int train_pos = 0, train_neg = 0, val_pos = 0, val_neg = 0;
  for (auto i : split.train_indices) (labels[i] == 1 ? train_pos : train_neg)++;
  for (auto i : split.val_indices) (labels[i] == 1 ? val_pos : val_neg)++;
  REQUIRE(train_pos == 28);
  REQUIRE(train_neg == 160);
  REQUIRE(val_pos == 7);
  REQUIRE(val_neg == 40);
}

TEST_CASE("stratified split is deterministic and exhaustive", "[training]") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_pos = 2 + static_cast<int>(rng.bounded(30));
    const int n_neg = 2 + static_cast<int>(rng.bounded(60));
    std::vector<int> labels;
    for (int i = 0; i < n_pos; ++i) labels.push_back(1);
    for (int i = 0; i < n_neg; ++i) labels.push_back(0);
    rng.shuffle(labels);
    const double ratio = rng.uniform(0.1, 0.45);
    const std::uint64_t seed = rng.next_u64();

    auto a = stratified_split(labels, ratio, seed);
    auto b = stratified_split(labels, ratio, seed);
    REQUIRE(a.train_indices == b.train_indices);
    REQUIRE(a.val_indices == b.val_indices);

    std::vector<std::size_t> all = a.train_indices;
    all.insert(all.end(), a.val_indices.begin(), a.val_indices.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) REQUIRE(all[i] == i);

    // Per-class validation count within one of the exact ratio.
    int val_pos = 0, val_neg = 0;
    for (auto i : a.val_indices) (labels[i] == 1 ? val_pos : val_neg)++;
    REQUIRE(std::abs(val_pos - n_pos * ratio) <= 1.0);
    REQUIRE(std::abs(val_neg - n_neg * ratio) <= 1.0);
  }
}

TEST_CASE("a singleton class stays in train with a warning", "[training]") {
  std::vector<int> labels = {0, 0, 0, 0, 0, 1};
  auto split = stratified_split(labels, 0.3, 1);
  REQUIRE_FALSE(split.warnings.empty());
  for (auto i : split.val_indices) REQUIRE(labels[i] == 0);
  bool pos_in_train = false;
  for (auto i : split.train_indices) pos_in_train = pos_in_train || labels[i] == 1;
  REQUIRE(pos_in_train);
}

TEST_CASE("sub-sequence starts follow the documented stride", "[training]") {
  REQUIRE(subsequence_starts(1000, 1000, 200) == std::vector<int>{0});
  REQUIRE(subsequence_starts(1800, 1000, 200) == std::vector<int>{0, 800});
  REQUIRE(subsequence_starts(4500, 1000, 200).size() == 5);
  REQUIRE(subsequence_starts(4500, 1000, 200, 4).size() == 4);
  try {
    subsequence_starts(999, 1000, 200);
    FAIL("expected TooShort");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::too_short);
  }
}

TEST_CASE("four sub-sequences per video reproduce the documented corpus counts", "[training]") {
  // 28 positive and 160 negative training videos, 4 windows each.
  int examples = 0, positives = 0, negatives = 0;
  for (int v = 0; v < 188; ++v) {
    const int label = v < 28 ? 1 : 0;
    const auto starts = subsequence_starts(4500, 1000, 200, 4);
    examples += static_cast<int>(starts.size());
    (label == 1 ? positives : negatives) += static_cast<int>(starts.size());
  }
  REQUIRE(examples == 752);
  REQUIRE(positives == 112);
  REQUIRE(negatives == 640);
}

TEST_CASE("split subsequences inherit the video label", "[training]") {
  SequenceTensor seq(18, 7, 260, 30.0f);
  seq.label = 1;
  for (std::size_t i = 0; i < seq.data.size(); ++i) seq.data[i] = static_cast<float>(i % 97);
  auto subs = split_subsequences(seq, 100, 20);
  REQUIRE(subs.size() == 3);
  for (const auto& s : subs) {
    REQUIRE(s.frames == 100);
    REQUIRE(s.label == 1);
  }
  // Start offsets 0, 80, 160.
  REQUIRE(subs[1].at(0, 0, 0) == seq.at(0, 0, 80));
  REQUIRE(subs[2].at(3, 2, 5) == seq.at(3, 2, 165));
}

TEST_CASE("voting takes the max probability and any-positive rule", "[training]") {
  auto a = vote_predict({0.2, 0.7}, 0.5);
  REQUIRE(a.label == 1);
  REQUIRE(a.score == 0.7);
  auto b = vote_predict({0.1, 0.2, 0.3}, 0.5);
  REQUIRE(b.label == 0);
  REQUIRE(b.score == 0.3);
  auto c = vote_predict({0.9}, 0.5);
  REQUIRE(c.label == 1);
  REQUIRE(c.score == 0.9);
  try {
    vote_predict({}, 0.5);
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::empty_input);
  }
}

TEST_CASE("raising the vote threshold never flips negative to positive", "[training]") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> probs;
    const int n = 1 + static_cast<int>(rng.bounded(6));
    for (int i = 0; i < n; ++i) probs.push_back(rng.uniform());
    const double t1 = rng.uniform(0.05, 0.95);
    const double t2 = rng.uniform(t1, 0.99);
    REQUIRE(vote_predict(probs, t2).label <= vote_predict(probs, t1).label);
  }
}

TEST_CASE("roc auc matches the hand example and edge cases", "[training][metrics]") {
  auto r = roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  REQUIRE(r.auc == Catch::Approx(0.75).margin(1e-12));

  auto perfect = roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  REQUIRE(perfect.auc == 1.0);

  auto ties = roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1});
  REQUIRE(ties.auc == 0.5);

  try {
    roc_auc({0.5, 0.6}, {1, 1});
    FAIL("expected SingleClass");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::single_class);
  }
}

TEST_CASE("rank auc equals the brute-force pairwise oracle", "[training][metrics]") {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.bounded(49));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      // Coarse grid so ties actually happen.
      scores[i] = static_cast<double>(rng.bounded(12)) / 11.0;
      labels[i] = static_cast<int>(rng.bounded(2));
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) {
      labels[0] = 0;
      labels[1] = 1;
    }

    double wins = 0.0;
    std::int64_t pairs = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[i] != 1) continue;
      for (int j = 0; j < n; ++j) {
        if (labels[j] != 0) continue;
        ++pairs;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    }
    const double oracle = wins / static_cast<double>(pairs);
    auto r = roc_auc(scores, labels);
    REQUIRE(r.auc == oracle);

    // ROC points: monotone fpr, trapezoid integral equals the rank AUC.
    for (std::size_t i = 1; i < r.points.size(); ++i)
      REQUIRE(r.points[i].fpr >= r.points[i - 1].fpr);
    REQUIRE(trapezoid_auc(r.points) == Catch::Approx(r.auc).margin(1e-9));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms", "[training][metrics]") {
  Rng rng(6);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(static_cast<double>(rng.bounded(15)) / 7.0 - 1.0);
    labels.push_back(static_cast<int>(rng.bounded(2)));
  }
  labels[0] = 0;
  labels[1] = 1;
  auto base = roc_auc(scores, labels);

  std::vector<double> affine(scores);
  for (auto& s : affine) s = 3.0 * s + 2.0;
  REQUIRE(roc_auc(affine, labels).auc == base.auc);

  std::vector<double> curved(scores);
  for (auto& s : curved) s = std::atan(4.0 * s);
  REQUIRE(roc_auc(curved, labels).auc == Catch::Approx(base.auc).margin(1e-12));
}

TEST_CASE("training loss decreases over early epochs for most seeds", "[training]") {
  auto corpus = micro_corpus(100, 4, 120);
  auto cfg = micro_model();
  int monotone = 0;
  for (int seed = 0; seed < 10; ++seed) {
    auto tc = micro_train(static_cast<std::uint64_t>(seed), 10);
    tc.lr = 3e-4;  // full-batch descent stays monotone at this step size
    auto result = train(corpus, {}, tc, cfg);
    bool decreasing = true;
    for (std::size_t e = 1; e < result.history.size(); ++e)
      decreasing = decreasing && result.history[e].train_loss < result.history[e - 1].train_loss;
    monotone += decreasing ? 1 : 0;
  }
  REQUIRE(monotone >= 9);
}

TEST_CASE("training with the same seed is bit-reproducible", "[training]") {
  auto corpus = micro_corpus(200, 3, 120);
  std::vector<LabeledSequence> val = {corpus[0], corpus[3]};  // one per class
  auto cfg = micro_model();
  auto tc = micro_train(9, 3);

  auto r1 = train(corpus, val, tc, cfg);
  auto r2 = train(corpus, val, tc, cfg);
  auto t1 = tensors_of(r1.best_params);
  auto t2 = tensors_of(r2.best_params);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) REQUIRE(t1[i]->data == t2[i]->data);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    REQUIRE(r1.history[e].train_loss == r2.history[e].train_loss);
    REQUIRE(r1.history[e].val_auc == r2.history[e].val_auc);
  }
}

TEST_CASE("thread count does not change the training result", "[training]") {
  auto corpus = micro_corpus(300, 3, 120);
  auto cfg = micro_model();
  auto tc1 = micro_train(11, 2);
  tc1.threads = 1;
  auto tc2 = micro_train(11, 2);
  tc2.threads = 2;
  auto r1 = train(corpus, {}, tc1, cfg);
  auto r2 = train(corpus, {}, tc2, cfg);
  auto t1 = tensors_of(r1.best_params);
  auto t2 = tensors_of(r2.best_params);
  for (std::size_t i = 0; i < t1.size(); ++i) REQUIRE(t1[i]->data == t2[i]->data);
}

TEST_CASE("non-finite inputs abort training with a diagnostic", "[training]") {
  auto corpus = micro_corpus(400, 2, 120);
  corpus[0].seq.data[100] = std::numeric_limits<float>::infinity();
  auto cfg = micro_model();
  auto tc = micro_train(13, 1);
  try {
    train(corpus, {}, tc, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::non_finite_loss);
  }
}

TEST_CASE("training rejects single-class data", "[training]") {
  auto corpus = micro_corpus(500, 2, 120);
  for (auto& ex : corpus) ex.label = 1;
  auto cfg = micro_model();
  auto tc = micro_train(14, 1);
  REQUIRE_THROWS_AS(train(corpus, {}, tc, cfg), Error);
}

TEST_CASE("pipeline splits videos and expands training sub-sequences", "[training]") {
  auto corpus = micro_corpus(600, 5, 130);  // 10 videos, window 120 -> 1 each
  auto cfg = micro_model();
  auto tc = micro_train(15, 1);
  tc.val_ratio = 0.2;
  auto result = run_training_pipeline(corpus, tc, cfg);
  REQUIRE(result.split.train_indices.size() == 8);
  REQUIRE(result.split.val_indices.size() == 2);
  REQUIRE(result.train_subsequences == 8);
  REQUIRE(result.train_result.history.size() == 1);
  REQUIRE(result.train_result.best_val_auc >= 0.0);
}
