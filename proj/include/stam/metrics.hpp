#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "stam/error.hpp"

namespace stam {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> points;
};

/// ROC-AUC by the rank statistic (ties get half credit) plus the ROC points
/// from sweeping the unique score thresholds. The trapezoid integral of the
/// points equals the rank AUC.
inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), Errc::length_mismatch,
          "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) {
    require(y == 0 || y == 1, Errc::malformed_input, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = n - pos;
  require(pos > 0 && neg > 0, Errc::single_class, "need both classes for ROC-AUC");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups; AUC = (sum of positive ranks - P(P+1)/2) / (P*N).
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  RocResult result;
  result.auc = (pos_rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1)) /
               (static_cast<double>(pos) * static_cast<double>(neg));

  // Sweep thresholds from high to low; one point per unique score.
  double max_score = scores[order[n - 1]];
  result.points.push_back({0.0, 0.0, max_score + 1.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = n; i > 0;) {
    std::size_t j = i;
    while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) --j;
    for (std::size_t k = j; k < i; ++k) {
      if (labels[order[k]] == 1)
        ++tp;
      else
        ++fp;
    }
    result.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                             static_cast<double>(tp) / static_cast<double>(pos),
                             scores[order[j]]});
    i = j;
  }
  return result;
}

/// Trapezoid integral of ROC points (test oracle companion).
inline double trapezoid_auc(const std::vector<RocPoint>& points) {
  double acc = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    acc += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
  return acc;
}

struct VotePrediction {
  int label = 0;
  double score = 0.0;
};

/// Voting rule over sub-sequence probabilities: positive iff any probability
/// reaches the threshold; the video score is the maximum probability.
inline VotePrediction vote_predict(const std::vector<double>& probabilities, double threshold) {
  require(!probabilities.empty(), Errc::empty_input, "no sub-sequence probabilities");
  VotePrediction out;
  out.score = *std::max_element(probabilities.begin(), probabilities.end());
  out.label = out.score >= threshold ? 1 : 0;
  return out;
}

struct PerVideoResult {
  std::string id;
  double score = 0.0;
  int true_label = 0;
  int pred_label = 0;
  std::vector<double> subsequence_probs;
};

struct ConfusionCounts {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalReport {
  double roc_auc = 0.0;
  std::vector<RocPoint> roc_points;
  std::vector<PerVideoResult> per_video;
  ConfusionCounts confusion;
  double threshold = 0.5;
};

inline EvalReport make_eval_report(std::vector<PerVideoResult> per_video, double threshold) {
  EvalReport report;
  report.per_video = std::move(per_video);
  report.threshold = threshold;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : report.per_video) {
    scores.push_back(v.score);
    labels.push_back(v.true_label);
    if (v.true_label == 1 && v.pred_label == 1) ++report.confusion.tp;
    if (v.true_label == 0 && v.pred_label == 1) ++report.confusion.fp;
    if (v.true_label == 0 && v.pred_label == 0) ++report.confusion.tn;
    if (v.true_label == 1 && v.pred_label == 0) ++report.confusion.fn;
  }
  auto roc = roc_auc(scores, labels);
  report.roc_auc = roc.auc;
  report.roc_points = std::move(roc.points);
  return report;
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["roc_auc"] = report.roc_auc;
  auto& pts = j["roc_points"] = nlohmann::ordered_json::array();
  for (const auto& p : report.roc_points) {
    pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", p.threshold}});
  }
  j["threshold"] = report.threshold;
  j["confusion"] = {{"tp", report.confusion.tp},
                    {"fp", report.confusion.fp},
                    {"tn", report.confusion.tn},
                    {"fn", report.confusion.fn}};
  auto& vids = j["per_video"] = nlohmann::ordered_json::array();
  for (const auto& v : report.per_video) {
    vids.push_back({{"id", v.id},
                    {"score", v.score},
                    {"true_label", v.true_label},
                    {"pred_label", v.pred_label},
                    {"subsequences", v.subsequence_probs}});
  }
  return j;
}

}  // namespace stam
