#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stam/preprocess.hpp"
#include "stam/rng.hpp"

using namespace stam;

namespace {

constexpr double kMissing = -9999.0;

std::pair<std::vector<double>, std::vector<std::uint8_t>> series_from(
    const std::vector<double>& values) {
  std::vector<double> s;
  std::vector<std::uint8_t> m;
  for (double v : values) {
    if (v == kMissing) {
      s.push_back(0.0);
      m.push_back(1);
    } else {
      s.push_back(v);
      m.push_back(0);
    }
  }
  return {s, m};
}

/// Plausible random pose with a well-defined trunk, shoulders, and hips.
PoseTimeSeries random_pose(Rng& rng, int frames) {
  PoseTimeSeries p(kNumJoints, frames, 30.0);
  for (int t = 0; t < frames; ++t) {
    const double cx = rng.uniform(-3, 3), cy = rng.uniform(-3, 3);
    for (int j = 0; j < kNumJoints; ++j) {
      p.at(j, 0, t) = cx + rng.uniform(-1.0, 1.0);
      p.at(j, 1, t) = cy + rng.uniform(-1.0, 1.0);
    }
    // Pull the anchor joints apart so nothing is degenerate.
    p.at(joints::right_shoulder, 0, t) = cx + 0.6 + rng.uniform(0, 0.2);
    p.at(joints::left_shoulder, 0, t) = cx - 0.6 - rng.uniform(0, 0.2);
    p.at(joints::right_hip, 0, t) = cx + 0.4;
    p.at(joints::left_hip, 0, t) = cx - 0.4;
    p.at(joints::right_hip, 1, t) = cy + 1.5;
    p.at(joints::left_hip, 1, t) = cy + 1.5 + rng.uniform(-0.1, 0.1);
    p.at(joints::neck, 0, t) = cx;
    p.at(joints::neck, 1, t) = cy + rng.uniform(-0.2, 0.2);
  }
  return p;
}

double trunk_length(const PoseTimeSeries& p, int t) {
  const double hx = 0.5 * (p.at(joints::right_hip, 0, t) + p.at(joints::left_hip, 0, t));
  const double hy = 0.5 * (p.at(joints::right_hip, 1, t) + p.at(joints::left_hip, 1, t));
  return std::hypot(p.at(joints::neck, 0, t) - hx, p.at(joints::neck, 1, t) - hy);
}

}  // namespace

TEST_CASE("linear imputation fills interior gaps", "[preprocess]") {
  auto [s, m] = series_from({1.0, kMissing, 3.0});
  auto out = impute_linear(s, m);
  REQUIRE(out == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("leading gaps hold the nearest observation", "[preprocess]") {
  auto [s, m] = series_from({kMissing, kMissing, 4.0, 6.0});
  auto out = impute_linear(s, m);
  REQUIRE(out == std::vector<double>{4.0, 4.0, 4.0, 6.0});
}

TEST_CASE("all-missing series is rejected", "[preprocess]") {
  auto [s, m] = series_from({kMissing, kMissing});
  try {
    impute_linear(s, m);
    FAIL("expected AllMissing");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::all_missing);
  }
}

TEST_CASE("imputation is exact on affine series", "[preprocess]") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng.bounded(20));
    const double a = rng.uniform(-3, 3), b = rng.uniform(-2, 2);
    std::vector<double> s(n);
    std::vector<std::uint8_t> m(n, 0);
    for (int i = 0; i < n; ++i) s[i] = a + b * i;
    for (int i = 1; i + 1 < n; ++i) m[i] = rng.uniform() < 0.4 ? 1 : 0;
    auto out = impute_linear(s, m);
    for (int i = 0; i < n; ++i) REQUIRE(out[i] == Catch::Approx(a + b * i).margin(1e-12));
  }
}

TEST_CASE("rolling median with window 3 flattens a spike", "[preprocess]") {
  std::vector<double> s = {0, 0, 9, 0, 0};
  auto out = rolling_filter(s, 0.1, 30.0, FilterMode::median);  // w = 3
  REQUIRE(filter_window_frames(0.1, 30.0) == 3);
  REQUIRE(out == std::vector<double>{0, 0, 0, 0, 0});
}

TEST_CASE("rolling mean leaves constants unchanged", "[preprocess]") {
  std::vector<double> s(17, 4.25);
  auto out = rolling_filter(s, 0.5, 30.0, FilterMode::mean);
  REQUIRE(out == s);
}

TEST_CASE("window of one frame is the identity", "[preprocess]") {
  Rng rng(6);
  std::vector<double> s(9);
  for (auto& v : s) v = rng.uniform(-5, 5);
  REQUIRE(rolling_filter(s, 0.01, 30.0, FilterMode::median) == s);
  REQUIRE(rolling_filter(s, 0.01, 30.0, FilterMode::mean) == s);
}

TEST_CASE("window sizes are rounded then forced odd", "[preprocess]") {
  REQUIRE(filter_window_frames(0.5, 30.0) == 15);
  REQUIRE(filter_window_frames(0.25, 30.0) == 7);
  REQUIRE(filter_window_frames(0.03, 30.0) == 1);
}

TEST_CASE("median removes isolated spikes bounded by equal neighbors", "[preprocess]") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 8 + static_cast<int>(rng.bounded(10));
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform(-2, 2);
    const int i = 1 + static_cast<int>(rng.bounded(n - 2));
    const double v = rng.uniform(-2, 2);
    s[i - 1] = v;
    s[i + 1] = v;
    s[i] = v + 10.0;
    auto out = rolling_filter(s, 0.1, 30.0, FilterMode::median);
    REQUIRE(out[i] == Catch::Approx(v).margin(1e-12));
  }
}

TEST_CASE("normalization scales the trunk to one", "[preprocess]") {
  // Neck at (0,0), hip midpoint at (0,2): trunk 2, so everything shrinks by 0.5.
  PoseTimeSeries p(kNumJoints, 1, 30.0);
  const auto set = [&](int j, double x, double y) {
    p.at(j, 0, 0) = x;
    p.at(j, 1, 0) = y;
  };
  for (int j = 0; j < kNumJoints; ++j) set(j, 0.1 * j, -0.2 * j);
  set(joints::neck, 0.0, 0.0);
  set(joints::right_shoulder, 0.5, 0.0);
  set(joints::left_shoulder, -0.5, 0.0);
  set(joints::right_hip, 0.3, 2.0);
  set(joints::left_hip, -0.3, 2.0);
  set(joints::nose, 0.0, -1.0);

  auto out = normalize_pose(p);
  REQUIRE(trunk_length(out, 0) == Catch::Approx(1.0).margin(1e-9));
  // Upper-body distances scale by exactly 1/trunk = 0.5.
  const double nose_neck = std::hypot(out.at(joints::nose, 0, 0) - out.at(joints::neck, 0, 0),
                                      out.at(joints::nose, 1, 0) - out.at(joints::neck, 1, 0));
  REQUIRE(nose_neck == Catch::Approx(0.5).margin(1e-9));
  REQUIRE(out.at(joints::neck, 0, 0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(out.at(joints::neck, 1, 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("normalization is idempotent", "[preprocess]") {
  PoseTimeSeries p(kNumJoints, 1, 30.0);
  const auto set = [&](int j, double x, double y) {
    p.at(j, 0, 0) = x;
    p.at(j, 1, 0) = y;
  };
  set(joints::nose, 0.0, -0.4);
  set(joints::neck, 0.0, 0.0);
  set(joints::right_shoulder, 0.3, 0.0);
  set(joints::right_elbow, 0.6, 0.2);
  set(joints::right_wrist, 0.9, 0.4);
  set(joints::left_shoulder, -0.3, 0.0);
  set(joints::left_elbow, -0.6, 0.2);
  set(joints::left_wrist, -0.9, 0.4);
  set(joints::right_hip, 0.15, 1.0);
  set(joints::right_knee, 0.3, 1.5);
  set(joints::right_ankle, 0.4, 2.0);
  set(joints::left_hip, -0.15, 1.0);
  set(joints::left_knee, -0.3, 1.5);
  set(joints::left_ankle, -0.4, 2.0);
  set(joints::right_eye, 0.08, -0.5);
  set(joints::left_eye, -0.08, -0.5);
  set(joints::right_ear, 0.18, -0.45);
  set(joints::left_ear, -0.18, -0.45);

  auto out = normalize_pose(p);
  for (int j = 0; j < kNumJoints; ++j)
    for (int a = 0; a < 2; ++a)
      REQUIRE(out.at(j, a, 0) == Catch::Approx(p.at(j, a, 0)).margin(1e-9));
}

TEST_CASE("normalization is scale and translation invariant", "[preprocess]") {
  Rng rng(8);
  auto p = random_pose(rng, 6);
  auto base = normalize_pose(p);

  PoseTimeSeries scaled = p;
  for (auto& v : scaled.xy) v *= 3.0;
  auto out_scaled = normalize_pose(scaled);

  PoseTimeSeries shifted = p;
  for (int j = 0; j < kNumJoints; ++j)
    for (int t = 0; t < p.frames; ++t) {
      shifted.at(j, 0, t) += 17.5;
      shifted.at(j, 1, t) -= 42.25;
    }
  auto out_shifted = normalize_pose(shifted);

  for (std::size_t i = 0; i < base.xy.size(); ++i) {
    REQUIRE(out_scaled.xy[i] == Catch::Approx(base.xy[i]).margin(1e-6));
    REQUIRE(out_shifted.xy[i] == Catch::Approx(base.xy[i]).margin(1e-6));
  }
}

TEST_CASE("shoulder and hip lines are horizontal after normalization", "[preprocess]") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_pose(rng, 4);
    auto out = normalize_pose(p);
    for (int t = 0; t < out.frames; ++t) {
      REQUIRE(std::abs(out.at(joints::right_shoulder, 1, t) - out.at(joints::left_shoulder, 1, t)) <
              1e-9);
      REQUIRE(std::abs(out.at(joints::right_hip, 1, t) - out.at(joints::left_hip, 1, t)) < 1e-9);
      // Chirality: right shoulder/hip on positive x.
      REQUIRE(out.at(joints::right_shoulder, 0, t) > out.at(joints::left_shoulder, 0, t));
      REQUIRE(out.at(joints::right_hip, 0, t) > out.at(joints::left_hip, 0, t));
    }
  }
}

TEST_CASE("degenerate frames borrow the nearest transform", "[preprocess]") {
  Rng rng(10);
  auto p = random_pose(rng, 5);
  // Collapse frame 2 onto a single point: zero trunk and coincident anchors.
  for (int j = 0; j < kNumJoints; ++j)
    for (int a = 0; a < 2; ++a) p.at(j, a, 2) = 1.0;
  auto out = normalize_pose(p);
  for (int a = 0; a < 2; ++a) REQUIRE(std::isfinite(out.at(joints::nose, a, 2)));

  PoseTimeSeries all_bad(kNumJoints, 2, 30.0);
  try {
    normalize_pose(all_bad);
    FAIL("expected DegeneratePose");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::degenerate_pose);
  }
}

TEST_CASE("full preprocessing chain is deterministic", "[preprocess]") {
  Rng rng(12);
  RawPoseSequence raw;
  raw.fps = 30.0f;
  for (int t = 0; t < 40; ++t) {
    RawPoseFrame f;
    f.frame_index = t;
    auto pose = random_pose(rng, 1);
    for (int j = 0; j < kNumJoints; ++j) {
      f.joints[j] = {static_cast<float>(pose.at(j, 0, 0)), static_cast<float>(pose.at(j, 1, 0)),
                     0.9f};
      f.missing[j] = rng.uniform() < 0.05;
    }
    raw.frames.push_back(f);
  }
  auto a = preprocess_pose(raw);
  auto b = preprocess_pose(raw);
  REQUIRE(a.xy == b.xy);
}
