#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "stam/error.hpp"
#include "stam/layout.hpp"
#include "stam/pose_io.hpp"
#include "stam/rng.hpp"

namespace stam {

struct BurstAnnotation {
  int joint = 0;
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  double freq_hz = 0.0;
};

struct SynthVideo {
  RawPoseSequence raw;
  int label = 0;  // 1 = oscillatory bursts present
  std::vector<BurstAnnotation> bursts;
  std::string id;
};

/// Generator settings. Positive sequences carry band-limited oscillatory
/// bursts (2-5 Hz) at a few limb joints; both classes share slow whole-body
/// drift, per-joint wander, gross slow limb swings, and estimator-style
/// jitter, so only the bursts are discriminative.
struct SynthConfig {
  int n_pos = 40;
  int n_neg = 160;
  int frames = 1000;
  double fps = 30.0;
  std::uint64_t seed = 7;

  int burst_joints = 3;
  int burst_min_len = 40;
  int burst_max_len = 80;
  double burst_amplitude = 0.05;  // trunk-length units
  double burst_min_hz = 2.0;
  double burst_max_hz = 5.0;
  int burst_min_gap = 30;
  int burst_max_gap = 140;

  double drift_amplitude = 0.25;
  double noise_sigma = 0.01;
  double wander_amplitude = 0.02;
  double distractor_amplitude = 0.10;
  int distractor_joints = 2;
  double missing_prob = 0.02;

  void validate() const {
    require(n_pos >= 1 && n_neg >= 1, Errc::config_invalid, "class counts must be >= 1");
    require(frames >= 2, Errc::config_invalid, "frames must be >= 2");
    require(fps > 0.0, Errc::config_invalid, "fps must be positive");
    require(burst_joints >= 1, Errc::config_invalid, "burst_joints must be >= 1");
    require(burst_min_len >= 2 && burst_min_len <= burst_max_len, Errc::config_invalid,
            "bad burst length range");
    require(burst_max_len < frames, Errc::config_invalid, "burst length must be below frames");
    require(burst_amplitude > 0.0 && drift_amplitude > 0.0, Errc::config_invalid,
            "amplitudes must be positive");
    require(noise_sigma >= 0.0, Errc::config_invalid, "noise_sigma must be >= 0");
    require(burst_min_hz > 0.0 && burst_min_hz <= burst_max_hz, Errc::config_invalid,
            "bad burst frequency band");
    require(missing_prob >= 0.0 && missing_prob < 0.5, Errc::config_invalid,
            "missing_prob must be in [0, 0.5)");
  }
};

namespace detail {

// Supine skeleton with trunk length 1, image-style axes (y grows downward).
inline const std::array<std::array<double, 2>, kNumJoints>& base_skeleton() {
  static const std::array<std::array<double, 2>, kNumJoints> base = {{
      {0.00, -0.45},   // nose
      {0.00, 0.00},    // neck
      {0.35, 0.02},    // right shoulder
      {0.65, 0.25},    // right elbow
      {0.90, 0.45},    // right wrist
      {-0.35, 0.02},   // left shoulder
      {-0.65, 0.25},   // left elbow
      {-0.90, 0.45},   // left wrist
      {0.18, 1.00},    // right hip
      {0.35, 1.55},    // right knee
      {0.45, 2.05},    // right ankle
      {-0.18, 1.00},   // left hip
      {-0.35, 1.55},   // left knee
      {-0.45, 2.05},   // left ankle
      {0.08, -0.55},   // right eye
      {-0.08, -0.55},  // left eye
      {0.18, -0.48},   // right ear
      {-0.18, -0.48},  // left ear
  }};
  return base;
}

inline const std::vector<int>& limb_joints() {
  static const std::vector<int> limbs = {
      joints::right_elbow, joints::right_wrist, joints::left_elbow,  joints::left_wrist,
      joints::right_knee,  joints::right_ankle, joints::left_knee,   joints::left_ankle};
  return limbs;
}

struct SineTerm {
  double amp, freq, phase, dir_x, dir_y;
  int start = 0, end = 0;  // active frame range, end exclusive
  bool windowed = false;   // Hann envelope over [start, end)
};

inline double eval_term(const SineTerm& s, int t, double fps) {
  if (t < s.start || t >= s.end) return 0.0;
  double envelope = 1.0;
  if (s.windowed) {
    const double u = static_cast<double>(t - s.start) / static_cast<double>(s.end - s.start - 1);
    envelope = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * u));
  }
  return s.amp * envelope *
         std::sin(2.0 * std::numbers::pi * s.freq * static_cast<double>(t) / fps + s.phase);
}

}  // namespace detail

/// Deterministic two-class corpus: a pure function of the config.
/// Ground-truth burst locations are attached per video.
inline std::vector<SynthVideo> generate_synthetic_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const auto& base = detail::base_skeleton();
  const auto& limbs = detail::limb_joints();
  const int total = cfg.n_pos + cfg.n_neg;

  std::vector<SynthVideo> videos;
  videos.reserve(static_cast<std::size_t>(total));
  for (int vi = 0; vi < total; ++vi) {
    const bool positive = vi < cfg.n_pos;
    SynthVideo video;
    video.label = positive ? 1 : 0;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%04d", positive ? "pos" : "neg",
                    positive ? vi : vi - cfg.n_pos);
      video.id = buf;
    }
    Rng rng(mix_keys(cfg.seed, 0x5e'9e'0000ull, static_cast<std::uint64_t>(vi)));

    // Whole-body drift (two slow sinusoids per axis) plus a per-video rigid
    // placement. Drift translates every joint equally, so body-centered
    // normalization removes it; it only exercises the preprocessing.
    std::array<std::vector<detail::SineTerm>, 2> drift;
    for (int axis = 0; axis < 2; ++axis)
      for (int h = 0; h < 2; ++h)
        drift[static_cast<std::size_t>(axis)].push_back(
            {cfg.drift_amplitude * rng.uniform(0.5, 1.0), rng.uniform(0.05, 0.25),
             rng.uniform(0.0, 2.0 * std::numbers::pi), 0, 0, 0, cfg.frames, false});
    const double scale = rng.uniform(0.8, 1.6);
    const double angle = rng.uniform(-0.5, 0.5);
    const double cos_a = std::cos(angle), sin_a = std::sin(angle);
    const double off_x = rng.uniform(2.0, 4.0), off_y = rng.uniform(2.0, 4.0);

    // Per-joint slow wander, shared by both classes.
    std::vector<detail::SineTerm> wander(static_cast<std::size_t>(kNumJoints) * 2);
    for (int j = 0; j < kNumJoints; ++j)
      for (int axis = 0; axis < 2; ++axis)
        wander[static_cast<std::size_t>(j * 2 + axis)] =
            {cfg.wander_amplitude * rng.uniform(0.4, 1.0), rng.uniform(0.1, 0.5),
             rng.uniform(0.0, 2.0 * std::numbers::pi), axis == 0 ? 1.0 : 0.0,
             axis == 0 ? 0.0 : 1.0, 0, cfg.frames, false};

    // Gross slow limb swings as distractors, also in both classes.
    std::vector<std::vector<detail::SineTerm>> extra(kNumJoints);
    for (int di = 0; di < cfg.distractor_joints; ++di) {
      const int joint = limbs[static_cast<std::size_t>(rng.bounded(limbs.size()))];
      const int len = rng.uniform_int(150, std::max(151, std::min(400, cfg.frames - 1)));
      const int start = rng.uniform_int(0, std::max(0, cfg.frames - len));
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      extra[static_cast<std::size_t>(joint)].push_back(
          {cfg.distractor_amplitude * rng.uniform(0.6, 1.0), rng.uniform(0.3, 0.9),
           rng.uniform(0.0, 2.0 * std::numbers::pi), std::cos(dir), std::sin(dir), start,
           start + len, true});
    }

    // Oscillatory bursts: positives only. Each chosen joint gets windows
    // tiling the timeline with random gaps, so bursts recur but stay sparse.
    std::vector<std::vector<detail::SineTerm>> bursts(kNumJoints);
    if (positive) {
      std::vector<int> pool = limbs;
      rng.shuffle(pool);
      const int nb = std::min<int>(cfg.burst_joints, static_cast<int>(pool.size()));
      for (int bj = 0; bj < nb; ++bj) {
        const int joint = pool[static_cast<std::size_t>(bj)];
        int t = rng.uniform_int(0, cfg.burst_max_gap);
        bool placed = false;
        while (true) {
          const int len = rng.uniform_int(cfg.burst_min_len, cfg.burst_max_len);
          if (t + len > cfg.frames) break;
          const double freq = rng.uniform(cfg.burst_min_hz, cfg.burst_max_hz);
          const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
          bursts[static_cast<std::size_t>(joint)].push_back(
              {cfg.burst_amplitude * rng.uniform(0.8, 1.2), freq,
               rng.uniform(0.0, 2.0 * std::numbers::pi), std::cos(dir), std::sin(dir), t, t + len,
               true});
          video.bursts.push_back({joint, t, t + len, freq});
          placed = true;
          t += len + rng.uniform_int(cfg.burst_min_gap, cfg.burst_max_gap);
        }
        if (!placed) {
          // Always at least one burst per chosen joint.
          const int len = std::min(cfg.burst_min_len, cfg.frames - 1);
          const double freq = rng.uniform(cfg.burst_min_hz, cfg.burst_max_hz);
          const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
          bursts[static_cast<std::size_t>(joint)].push_back(
              {cfg.burst_amplitude, freq, rng.uniform(0.0, 2.0 * std::numbers::pi), std::cos(dir),
               std::sin(dir), 0, len, true});
          video.bursts.push_back({joint, 0, len, freq});
        }
      }
    }

    video.raw.fps = static_cast<float>(cfg.fps);
    video.raw.source_id = video.id;
    video.raw.frames.resize(static_cast<std::size_t>(cfg.frames));
    for (int t = 0; t < cfg.frames; ++t) {
      auto& frame = video.raw.frames[static_cast<std::size_t>(t)];
      frame.frame_index = t;
      double drift_x = 0.0, drift_y = 0.0;
      for (const auto& s : drift[0]) drift_x += detail::eval_term(s, t, cfg.fps);
      for (const auto& s : drift[1]) drift_y += detail::eval_term(s, t, cfg.fps);

      for (int j = 0; j < kNumJoints; ++j) {
        double x = base[static_cast<std::size_t>(j)][0];
        double y = base[static_cast<std::size_t>(j)][1];
        x += detail::eval_term(wander[static_cast<std::size_t>(j * 2)], t, cfg.fps);
        y += detail::eval_term(wander[static_cast<std::size_t>(j * 2 + 1)], t, cfg.fps);
        for (const auto& s : extra[static_cast<std::size_t>(j)]) {
          const double v = detail::eval_term(s, t, cfg.fps);
          x += s.dir_x * v;
          y += s.dir_y * v;
        }
        for (const auto& s : bursts[static_cast<std::size_t>(j)]) {
          const double v = detail::eval_term(s, t, cfg.fps);
          x += s.dir_x * v;
          y += s.dir_y * v;
        }
        // Rigid placement + drift + jitter.
        const double px = scale * (cos_a * x - sin_a * y) + off_x + drift_x +
                          rng.normal(0.0, cfg.noise_sigma);
        const double py = scale * (sin_a * x + cos_a * y) + off_y + drift_y +
                          rng.normal(0.0, cfg.noise_sigma);
        auto& out = frame.joints[static_cast<std::size_t>(j)];
        const bool miss = rng.uniform() < cfg.missing_prob;
        if (miss) {
          out = {0.0f, 0.0f, 0.0f};
          frame.missing[static_cast<std::size_t>(j)] = true;
        } else {
          out[0] = static_cast<float>(px);
          out[1] = static_cast<float>(py);
          out[2] = static_cast<float>(rng.uniform(0.6, 1.0));
          frame.missing[static_cast<std::size_t>(j)] = false;
        }
      }
    }
    videos.push_back(std::move(video));
  }
  return videos;
}

inline nlohmann::ordered_json ground_truth_to_json(const std::vector<SynthVideo>& videos) {
  nlohmann::ordered_json j;
  auto& arr = j["videos"] = nlohmann::ordered_json::array();
  for (const auto& v : videos) {
    nlohmann::ordered_json rec;
    rec["id"] = v.id;
    rec["label"] = v.label;
    auto& bursts = rec["bursts"] = nlohmann::ordered_json::array();
    for (const auto& b : v.bursts)
      bursts.push_back({{"joint", b.joint},
                        {"start", b.start_frame},
                        {"end", b.end_frame},
                        {"freq_hz", b.freq_hz}});
    arr.push_back(std::move(rec));
  }
  return j;
}

/// Writes <id>.jsonl per video plus labels.json and ground_truth.json.
inline void write_synthetic_dataset(const std::vector<SynthVideo>& videos,
                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json labels;
  for (const auto& v : videos) {
    std::ofstream out(dir / (v.id + ".jsonl"));
    require(out.good(), Errc::file_not_found, "cannot write to " + dir.string());
    write_pose_jsonl(v.raw, out);
    labels[v.id] = v.label;
  }
  std::ofstream lab(dir / "labels.json");
  lab << labels.dump(2) << '\n';
  std::ofstream gt(dir / "ground_truth.json");
  gt << ground_truth_to_json(videos).dump(2) << '\n';
}

}  // namespace stam
