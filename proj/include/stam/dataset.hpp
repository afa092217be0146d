#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stam/error.hpp"
#include "stam/features.hpp"
#include "stam/pose_io.hpp"
#include "stam/preprocess.hpp"
#include "stam/rng.hpp"

namespace stam {

struct LabeledSequence {
  SequenceTensor seq;
  int label = 0;
  std::string id;
};

struct SplitResult {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::string> warnings;
};

/// Per-class random partition: each class is shuffled independently and
/// lround(n * val_ratio) members go to validation. A class with fewer than
/// two members cannot appear in both splits; it goes to train with a warning.
inline SplitResult stratified_split(const std::vector<int>& labels, double val_ratio,
                                    std::uint64_t seed) {
  require(val_ratio > 0.0 && val_ratio < 1.0, Errc::config_invalid, "val_ratio must be in (0,1)");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    require(y == 0 || y == 1, Errc::malformed_input, "labels must be 0 or 1");
    (y == 1 ? has_pos : has_neg) = true;
  }
  require(has_pos && has_neg, Errc::single_class, "both classes must be present");

  SplitResult result;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    if (members.size() < 2) {
      result.warnings.push_back("class " + std::to_string(cls) +
                                " has fewer than 2 members; keeping all in train");
      result.train_indices.insert(result.train_indices.end(), members.begin(), members.end());
      continue;
    }
    Rng rng(mix_keys(seed, 0x5ba1'7000ull + static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);
    auto n_val = static_cast<std::size_t>(
        std::lround(static_cast<double>(members.size()) * val_ratio));
    n_val = std::min(n_val, members.size() - 1);
    result.val_indices.insert(result.val_indices.end(), members.begin(),
                              members.begin() + static_cast<std::ptrdiff_t>(n_val));
    result.train_indices.insert(result.train_indices.end(),
                                members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(result.train_indices.begin(), result.train_indices.end());
  std::sort(result.val_indices.begin(), result.val_indices.end());
  return result;
}

/// Start frames of the sliding sub-sequence windows (stride = window -
/// overlap), optionally capped at max_count windows.
inline std::vector<int> subsequence_starts(int frames, int window, int overlap,
                                           int max_count = 0) {
  require(window >= 1 && overlap >= 0 && overlap < window, Errc::config_invalid,
          "invalid sub-sequence window");
  require(frames >= window, Errc::too_short,
          "sequence of " + std::to_string(frames) + " frames is shorter than the window (" +
              std::to_string(window) + ")");
  const int stride = window - overlap;
  int count = (frames - window) / stride + 1;
  if (max_count > 0) count = std::min(count, max_count);
  std::vector<int> starts(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) starts[static_cast<std::size_t>(i)] = i * stride;
  return starts;
}

/// Cuts a video into fixed-length sub-sequences that inherit its label.
inline std::vector<SequenceTensor> split_subsequences(const SequenceTensor& seq, int window,
                                                      int overlap, int max_count = 0) {
  auto starts = subsequence_starts(seq.frames, window, overlap, max_count);
  std::vector<SequenceTensor> out;
  out.reserve(starts.size());
  for (int s : starts) {
    SequenceTensor sub(seq.joints, seq.channels, window, seq.fps);
    for (int j = 0; j < seq.joints; ++j)
      for (int c = 0; c < seq.channels; ++c)
        for (int t = 0; t < window; ++t) sub.at(j, c, t) = seq.at(j, c, s + t);
    sub.label = seq.label;
    out.push_back(std::move(sub));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeled data directories
// ---------------------------------------------------------------------------

inline std::map<std::string, int> load_labels(const std::filesystem::path& dir) {
  const auto path = dir / "labels.json";
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format_error, "bad labels.json: " + std::string(e.what()));
  }
  require(j.is_object(), Errc::format_error, "labels.json must map id -> 0/1");
  std::map<std::string, int> labels;
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(it.value().is_number_integer(), Errc::format_error,
            "label for \"" + it.key() + "\" must be 0 or 1");
    const int y = it.value().get<int>();
    require(y == 0 || y == 1, Errc::format_error, "label for \"" + it.key() + "\" must be 0 or 1");
    labels[it.key()] = y;
  }
  require(!labels.empty(), Errc::empty_input, "labels.json is empty");
  return labels;
}

/// Loads a labeled data directory. Each id in labels.json must have either a
/// featurized <id>.stamseq (7 channels), a normalized-coordinate .stamseq
/// (2 channels, featurized on the fly), or a raw <id>.jsonl keypoint file
/// (preprocessed and featurized on the fly).
inline std::vector<LabeledSequence> load_directory(const std::filesystem::path& dir,
                                                   float confidence_threshold = kDefaultConfidenceThreshold,
                                                   float fps = 30.0f) {
  require(std::filesystem::is_directory(dir), Errc::file_not_found,
          dir.string() + " is not a directory");
  auto labels = load_labels(dir);
  std::vector<LabeledSequence> out;
  for (const auto& [id, label] : labels) {
    LabeledSequence item;
    item.id = id;
    item.label = label;
    const auto seq_path = dir / (id + ".stamseq");
    const auto jsonl_path = dir / (id + ".jsonl");
    if (std::filesystem::exists(seq_path)) {
      item.seq = load_sequence(seq_path);
      if (item.seq.channels == 2) item.seq = compute_motion_features(item.seq);
      require(item.seq.channels == kFeatureChannels, Errc::format_error,
              seq_path.string() + ": expected 2 or 7 channels");
    } else if (std::filesystem::exists(jsonl_path)) {
      auto raw = parse_pose_file(jsonl_path, confidence_threshold, fps);
      item.seq = compute_motion_features(preprocess_pose(raw));
    } else {
      fail(Errc::file_not_found, "no sequence file for id \"" + id + "\" in " + dir.string());
    }
    item.seq.label = label;
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace stam
