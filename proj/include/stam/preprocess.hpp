#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stam/error.hpp"
#include "stam/layout.hpp"
#include "stam/pose_io.hpp"

namespace stam {

/// Per-joint 2D coordinate time-series in double precision. Preprocessing is
/// done in doubles; quantization to float32 happens only at file boundaries.
struct PoseTimeSeries {
  int joints = 0;
  int frames = 0;
  double fps = 30.0;
  std::vector<double> xy;  // (j * 2 + axis) * frames + t

  PoseTimeSeries() = default;
  PoseTimeSeries(int j, int t, double f)
      : joints(j), frames(t), fps(f),
        xy(static_cast<std::size_t>(j) * 2 * static_cast<std::size_t>(t), 0.0) {}

  double& at(int j, int axis, int t) {
    return xy[(static_cast<std::size_t>(j) * 2 + static_cast<std::size_t>(axis)) *
                  static_cast<std::size_t>(frames) +
              static_cast<std::size_t>(t)];
  }
  double at(int j, int axis, int t) const {
    return xy[(static_cast<std::size_t>(j) * 2 + static_cast<std::size_t>(axis)) *
                  static_cast<std::size_t>(frames) +
              static_cast<std::size_t>(t)];
  }
};

/// Fills gaps by linear interpolation between the nearest observed values;
/// leading/trailing gaps hold the nearest observation.
inline std::vector<double> impute_linear(const std::vector<double>& series,
                                         const std::vector<std::uint8_t>& missing) {
  require(series.size() == missing.size(), Errc::length_mismatch,
          "series and missing mask differ in length");
  const int n = static_cast<int>(series.size());
  require(n > 0, Errc::empty_series, "empty series");

  std::vector<double> out(series);
  int first_obs = -1, last_obs = -1;
  for (int i = 0; i < n; ++i) {
    if (!missing[static_cast<std::size_t>(i)]) {
      if (first_obs < 0) first_obs = i;
      last_obs = i;
    }
  }
  require(first_obs >= 0, Errc::all_missing, "series has no observed value");

  for (int i = 0; i < first_obs; ++i) out[static_cast<std::size_t>(i)] = series[static_cast<std::size_t>(first_obs)];
  for (int i = last_obs + 1; i < n; ++i) out[static_cast<std::size_t>(i)] = series[static_cast<std::size_t>(last_obs)];

  int prev = first_obs;
  for (int i = first_obs + 1; i <= last_obs; ++i) {
    if (missing[static_cast<std::size_t>(i)]) continue;
    if (i > prev + 1) {
      const double a = series[static_cast<std::size_t>(prev)];
      const double b = series[static_cast<std::size_t>(i)];
      const double span = static_cast<double>(i - prev);
      for (int k = prev + 1; k < i; ++k)
        out[static_cast<std::size_t>(k)] = a + (b - a) * (static_cast<double>(k - prev) / span);
    }
    prev = i;
  }
  return out;
}

enum class FilterMode { median, mean };

/// Window length in frames for a smoothing window given in seconds: rounded,
/// then forced odd (downward), minimum 1.
inline int filter_window_frames(double window_seconds, double fps) {
  require(window_seconds > 0.0, Errc::config_invalid, "window_seconds must be positive");
  require(fps > 0.0, Errc::config_invalid, "fps must be positive");
  int w = static_cast<int>(std::lround(window_seconds * fps));
  if (w % 2 == 0) w -= 1;
  return std::max(w, 1);
}

/// Centered rolling filter with windows that shrink at the boundaries.
/// An even-sized boundary window uses the mean of the two middle order
/// statistics as its median.
inline std::vector<double> rolling_filter(const std::vector<double>& series, double window_seconds,
                                          double fps, FilterMode mode) {
  const int n = static_cast<int>(series.size());
  require(n > 0, Errc::empty_series, "empty series");
  const int w = filter_window_frames(window_seconds, fps);
  if (w == 1) return series;
  const int half = (w - 1) / 2;

  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(w));
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    if (mode == FilterMode::mean) {
      double sum = 0.0;
      for (int k = lo; k <= hi; ++k) sum += series[static_cast<std::size_t>(k)];
      out[static_cast<std::size_t>(i)] = sum / static_cast<double>(hi - lo + 1);
    } else {
      window.assign(series.begin() + lo, series.begin() + hi + 1);
      const std::size_t m = window.size() / 2;
      std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(m), window.end());
      double med = window[m];
      if (window.size() % 2 == 0) {
        double lower = *std::max_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(m));
        med = 0.5 * (lower + med);
      }
      out[static_cast<std::size_t>(i)] = med;
    }
  }
  return out;
}

namespace detail {

struct FrameTransform {
  double shoulder_cx, shoulder_cy, shoulder_cos, shoulder_sin;
  double hip_cx, hip_cy, hip_cos, hip_sin;
  double neck_x, neck_y;  // neck position after rotation
  double inv_trunk;
  bool degenerate;
};

inline constexpr double kDegenerateEps = 1e-9;

}  // namespace detail

/// Rotates the upper body about the shoulder midpoint so the shoulder line is
/// horizontal (right shoulder toward +x), rotates the lower body about the hip
/// midpoint the same way, then translates the neck to the origin and scales by
/// the neck-to-hip-center distance so the trunk has length 1.
///
/// Frames where the shoulders, hips, or trunk are degenerate reuse the
/// transform of the nearest non-degenerate frame; if every frame is
/// degenerate the whole sequence is rejected.
inline PoseTimeSeries normalize_pose(const PoseTimeSeries& coords,
                                     const JointLayout& layout = default_joint_layout()) {
  require(coords.joints == kNumJoints, Errc::shape_mismatch, "expected 18 joints");
  const int T = coords.frames;
  require(T > 0, Errc::empty_sequence, "empty pose series");

  std::vector<detail::FrameTransform> tf(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    auto& f = tf[static_cast<std::size_t>(t)];
    const double rsx = coords.at(joints::right_shoulder, 0, t);
    const double rsy = coords.at(joints::right_shoulder, 1, t);
    const double lsx = coords.at(joints::left_shoulder, 0, t);
    const double lsy = coords.at(joints::left_shoulder, 1, t);
    const double rhx = coords.at(joints::right_hip, 0, t);
    const double rhy = coords.at(joints::right_hip, 1, t);
    const double lhx = coords.at(joints::left_hip, 0, t);
    const double lhy = coords.at(joints::left_hip, 1, t);

    f.shoulder_cx = 0.5 * (rsx + lsx);
    f.shoulder_cy = 0.5 * (rsy + lsy);
    f.hip_cx = 0.5 * (rhx + lhx);
    f.hip_cy = 0.5 * (rhy + lhy);

    const double sdx = rsx - f.shoulder_cx, sdy = rsy - f.shoulder_cy;
    const double hdx = rhx - f.hip_cx, hdy = rhy - f.hip_cy;
    const double slen = std::hypot(sdx, sdy);
    const double hlen = std::hypot(hdx, hdy);
    if (slen < detail::kDegenerateEps || hlen < detail::kDegenerateEps) {
      f.degenerate = true;
      continue;
    }
    // Rotation that maps the right-shoulder direction onto +x.
    f.shoulder_cos = sdx / slen;
    f.shoulder_sin = -sdy / slen;
    f.hip_cos = hdx / hlen;
    f.hip_sin = -hdy / hlen;

    const double nx = coords.at(joints::neck, 0, t) - f.shoulder_cx;
    const double ny = coords.at(joints::neck, 1, t) - f.shoulder_cy;
    f.neck_x = f.shoulder_cx + nx * f.shoulder_cos - ny * f.shoulder_sin;
    f.neck_y = f.shoulder_cy + nx * f.shoulder_sin + ny * f.shoulder_cos;

    const double trunk = std::hypot(f.neck_x - f.hip_cx, f.neck_y - f.hip_cy);
    if (trunk < detail::kDegenerateEps) {
      f.degenerate = true;
      continue;
    }
    f.inv_trunk = 1.0 / trunk;
    f.degenerate = false;
  }

  // Borrow the nearest non-degenerate transform (ties go to the earlier frame).
  std::vector<int> source(static_cast<std::size_t>(T), -1);
  int nearest = -1;
  for (int t = 0; t < T; ++t) {
    if (!tf[static_cast<std::size_t>(t)].degenerate) nearest = t;
    source[static_cast<std::size_t>(t)] = nearest;
  }
  nearest = -1;
  for (int t = T - 1; t >= 0; --t) {
    if (!tf[static_cast<std::size_t>(t)].degenerate) nearest = t;
    const int before = source[static_cast<std::size_t>(t)];
    if (before < 0)
      source[static_cast<std::size_t>(t)] = nearest;
    else if (nearest >= 0 && (nearest - t) < (t - before))
      source[static_cast<std::size_t>(t)] = nearest;
  }
  require(source[0] >= 0, Errc::degenerate_pose, "every frame has a degenerate pose");

  std::array<bool, kNumJoints> is_upper{};
  for (int j : layout.upper_body) is_upper[static_cast<std::size_t>(j)] = true;

  PoseTimeSeries out(kNumJoints, T, coords.fps);
  for (int t = 0; t < T; ++t) {
    const auto& f = tf[static_cast<std::size_t>(source[static_cast<std::size_t>(t)])];
    for (int j = 0; j < kNumJoints; ++j) {
      const double x = coords.at(j, 0, t);
      const double y = coords.at(j, 1, t);
      double rx, ry;
      if (is_upper[static_cast<std::size_t>(j)]) {
        const double dx = x - f.shoulder_cx, dy = y - f.shoulder_cy;
        rx = f.shoulder_cx + dx * f.shoulder_cos - dy * f.shoulder_sin;
        ry = f.shoulder_cy + dx * f.shoulder_sin + dy * f.shoulder_cos;
      } else {
        const double dx = x - f.hip_cx, dy = y - f.hip_cy;
        rx = f.hip_cx + dx * f.hip_cos - dy * f.hip_sin;
        ry = f.hip_cy + dx * f.hip_sin + dy * f.hip_cos;
      }
      out.at(j, 0, t) = (rx - f.neck_x) * f.inv_trunk;
      out.at(j, 1, t) = (ry - f.neck_y) * f.inv_trunk;
    }
  }
  return out;
}

struct PreprocessOptions {
  double median_window_seconds = 0.5;
  double mean_window_seconds = 0.5;
};

/// Full cleaning chain: per-joint linear imputation, rolling median, rolling
/// mean, then body-centered normalization.
inline PoseTimeSeries preprocess_pose(const RawPoseSequence& raw,
                                      const JointLayout& layout = default_joint_layout(),
                                      const PreprocessOptions& opt = {}) {
  const int T = raw.length();
  require(T > 0, Errc::empty_sequence, "empty pose sequence");
  PoseTimeSeries clean(kNumJoints, T, static_cast<double>(raw.fps));

  std::vector<double> series(static_cast<std::size_t>(T));
  std::vector<std::uint8_t> missing(static_cast<std::size_t>(T));
  for (int j = 0; j < kNumJoints; ++j) {
    for (int axis = 0; axis < 2; ++axis) {
      for (int t = 0; t < T; ++t) {
        const auto& frame = raw.frames[static_cast<std::size_t>(t)];
        series[static_cast<std::size_t>(t)] =
            static_cast<double>(frame.joints[static_cast<std::size_t>(j)][static_cast<std::size_t>(axis)]);
        missing[static_cast<std::size_t>(t)] = frame.missing[static_cast<std::size_t>(j)] ? 1 : 0;
      }
      auto imputed = impute_linear(series, missing);
      auto filtered = rolling_filter(imputed, opt.median_window_seconds, clean.fps, FilterMode::median);
      filtered = rolling_filter(filtered, opt.mean_window_seconds, clean.fps, FilterMode::mean);
      for (int t = 0; t < T; ++t) clean.at(j, axis, t) = filtered[static_cast<std::size_t>(t)];
    }
  }
  return normalize_pose(clean, layout);
}

/// Quantizes a double-precision coordinate series to the float32 sequence
/// container (channels = 2, order x then y).
inline SequenceTensor to_sequence_tensor(const PoseTimeSeries& p) {
  SequenceTensor seq(p.joints, 2, p.frames, static_cast<float>(p.fps));
  for (int j = 0; j < p.joints; ++j)
    for (int axis = 0; axis < 2; ++axis)
      for (int t = 0; t < p.frames; ++t)
        seq.at(j, axis, t) = static_cast<float>(p.at(j, axis, t));
  return seq;
}

inline PoseTimeSeries from_sequence_tensor(const SequenceTensor& seq) {
  require(seq.channels == 2, Errc::shape_mismatch, "expected a 2-channel coordinate sequence");
  PoseTimeSeries p(seq.joints, seq.frames, static_cast<double>(seq.fps));
  for (int j = 0; j < seq.joints; ++j)
    for (int axis = 0; axis < 2; ++axis)
      for (int t = 0; t < seq.frames; ++t)
        p.at(j, axis, t) = static_cast<double>(seq.at(j, axis, t));
  return p;
}

}  // namespace stam
