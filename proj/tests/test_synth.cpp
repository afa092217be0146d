#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "stam/features.hpp"
#include "stam/preprocess.hpp"
#include "stam/synth.hpp"

using namespace stam;

namespace {

SynthConfig small_synth() {
  SynthConfig cfg;
  cfg.n_pos = 3;
  cfg.n_neg = 3;
  cfg.frames = 240;
  cfg.seed = 42;
  return cfg;
}

/// Power in the [lo_hz, hi_hz] band of a mean-removed, Hann-tapered window,
/// by direct DFT. The taper keeps the large slow drift from leaking into the
/// band of interest.
double band_energy(const std::vector<double>& window, double fps, double lo_hz, double hi_hz) {
  const int n = static_cast<int>(window.size());
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= n;
  std::vector<double> tapered(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const double hann = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / (n - 1)));
    tapered[static_cast<std::size_t>(t)] = (window[static_cast<std::size_t>(t)] - mean) * hann;
  }
  double energy = 0.0;
  for (int bin = 1; bin <= n / 2; ++bin) {
    const double freq = fps * bin / n;
    if (freq < lo_hz || freq > hi_hz) continue;
    std::complex<double> acc(0, 0);
    for (int t = 0; t < n; ++t) {
      const double angle = -2.0 * std::numbers::pi * bin * t / n;
      acc += tapered[static_cast<std::size_t>(t)] *
             std::complex<double>(std::cos(angle), std::sin(angle));
    }
    energy += std::norm(acc);
  }
  return energy;
}

std::vector<double> joint_window(const RawPoseSequence& raw, int joint, int axis, int start,
                                 int end) {
  std::vector<double> w;
  for (int t = start; t < end; ++t)
    w.push_back(raw.frames[static_cast<std::size_t>(t)].joints[static_cast<std::size_t>(joint)]
                           [static_cast<std::size_t>(axis)]);
  return w;
}

}  // namespace

TEST_CASE("generation is a pure function of the seed", "[synth]") {
  auto a = generate_synthetic_dataset(small_synth());
  auto b = generate_synthetic_dataset(small_synth());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].id == b[i].id);
    REQUIRE(a[i].label == b[i].label);
    REQUIRE(a[i].bursts.size() == b[i].bursts.size());
    for (int t = 0; t < a[i].raw.length(); ++t)
      for (int j = 0; j < kNumJoints; ++j)
        for (int c = 0; c < 3; ++c)
          REQUIRE(a[i].raw.frames[t].joints[j][c] == b[i].raw.frames[t].joints[j][c]);
  }

  auto other = small_synth();
  other.seed = 43;
  auto c = generate_synthetic_dataset(other);
  bool any_diff = false;
  for (int t = 0; t < a[0].raw.length() && !any_diff; ++t)
    any_diff = a[0].raw.frames[t].joints[0][0] != c[0].raw.frames[t].joints[0][0];
  REQUIRE(any_diff);
}

TEST_CASE("labels are recoverable from burst annotations", "[synth]") {
  auto videos = generate_synthetic_dataset(small_synth());
  for (const auto& v : videos) {
    if (v.label == 1)
      REQUIRE_FALSE(v.bursts.empty());
    else
      REQUIRE(v.bursts.empty());
  }
}

TEST_CASE("generated trunk lengths stay in the safe range", "[synth]") {
  auto videos = generate_synthetic_dataset(small_synth());
  for (const auto& v : videos) {
    for (const auto& frame : v.raw.frames) {
      if (frame.missing[joints::neck] || frame.missing[joints::right_hip] ||
          frame.missing[joints::left_hip])
        continue;
      const double hx =
          0.5 * (frame.joints[joints::right_hip][0] + frame.joints[joints::left_hip][0]);
      const double hy =
          0.5 * (frame.joints[joints::right_hip][1] + frame.joints[joints::left_hip][1]);
      const double trunk =
          std::hypot(frame.joints[joints::neck][0] - hx, frame.joints[joints::neck][1] - hy);
      REQUIRE(trunk >= 0.5);
      REQUIRE(trunk <= 2.0);
    }
  }
}

TEST_CASE("burst windows carry the advertised band energy", "[synth]") {
  auto cfg = small_synth();
  cfg.n_pos = 6;
  cfg.n_neg = 1;
  cfg.missing_prob = 0.0;
  auto videos = generate_synthetic_dataset(cfg);

  double ratio_sum = 0.0;
  int count = 0;
  for (const auto& v : videos) {
    for (const auto& b : v.bursts) {
      std::vector<int> burst_joints;
      for (const auto& bb : v.bursts) burst_joints.push_back(bb.joint);
      const double e_burst =
          band_energy(joint_window(v.raw, b.joint, 0, b.start_frame, b.end_frame), cfg.fps, 2, 5) +
          band_energy(joint_window(v.raw, b.joint, 1, b.start_frame, b.end_frame), cfg.fps, 2, 5);
      double e_other = 0.0;
      int others = 0;
      for (int j = 0; j < kNumJoints; ++j) {
        if (std::find(burst_joints.begin(), burst_joints.end(), j) != burst_joints.end()) continue;
        e_other +=
            band_energy(joint_window(v.raw, j, 0, b.start_frame, b.end_frame), cfg.fps, 2, 5) +
            band_energy(joint_window(v.raw, j, 1, b.start_frame, b.end_frame), cfg.fps, 2, 5);
        ++others;
      }
      e_other /= others;
      ratio_sum += e_burst / std::max(e_other, 1e-12);
      ++count;
    }
  }
  REQUIRE(count > 0);
  REQUIRE(ratio_sum / count >= 3.0);
}

TEST_CASE("every generated sequence survives the full pipeline", "[synth]") {
  auto cfg = small_synth();
  cfg.frames = 150;
  auto videos = generate_synthetic_dataset(cfg);
  for (const auto& v : videos) {
    std::stringstream buf;
    write_pose_jsonl(v.raw, buf);
    auto parsed = parse_pose_frames(buf);
    REQUIRE(parsed.length() == cfg.frames);
    auto features = compute_motion_features(preprocess_pose(parsed));
    REQUIRE(features.joints == 18);
    REQUIRE(features.channels == 7);
    REQUIRE(features.frames == cfg.frames);
    for (float x : features.data) REQUIRE(std::isfinite(x));
  }
}

TEST_CASE("invalid generator configs are rejected", "[synth]") {
  auto cfg = small_synth();
  cfg.n_pos = 0;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = small_synth();
  cfg.burst_max_len = cfg.frames;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = small_synth();
  cfg.burst_amplitude = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
}
