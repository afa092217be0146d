#pragma once

#include <cmath>
#include <vector>

#include "stam/error.hpp"
#include "stam/pose_io.hpp"
#include "stam/preprocess.hpp"

namespace stam {

inline constexpr int kFeatureChannels = 7;  // x, y, vx, vy, ax, ay, d
inline constexpr double kFeatureSmoothSeconds = 0.25;

/// Motion features per joint and frame: position, per-frame velocity and
/// acceleration (first entries zero), and the per-frame displacement
/// magnitude. Velocities and accelerations are smoothed with a centered
/// rolling mean of 0.25 s; the displacement uses the raw velocity.
inline SequenceTensor compute_motion_features(const PoseTimeSeries& clean) {
  const int T = clean.frames;
  const int M = clean.joints;
  const int w = filter_window_frames(kFeatureSmoothSeconds, clean.fps);
  require(w >= 3, Errc::too_short, "frame rate too low for the 0.25 s smoothing window");
  require(T >= w, Errc::too_short,
          "sequence of " + std::to_string(T) + " frames is shorter than the smoothing window (" +
              std::to_string(w) + ")");

  SequenceTensor out(M, kFeatureChannels, T, static_cast<float>(clean.fps));
  std::vector<double> vel[2], acc[2];
  for (int j = 0; j < M; ++j) {
    for (int axis = 0; axis < 2; ++axis) {
      auto& v = vel[axis];
      auto& a = acc[axis];
      v.assign(static_cast<std::size_t>(T), 0.0);
      a.assign(static_cast<std::size_t>(T), 0.0);
      for (int t = 1; t < T; ++t)
        v[static_cast<std::size_t>(t)] = clean.at(j, axis, t) - clean.at(j, axis, t - 1);
      for (int t = 1; t < T; ++t)
        a[static_cast<std::size_t>(t)] = v[static_cast<std::size_t>(t)] - v[static_cast<std::size_t>(t - 1)];
    }
    for (int t = 0; t < T; ++t) {
      out.at(j, 0, t) = static_cast<float>(clean.at(j, 0, t));
      out.at(j, 1, t) = static_cast<float>(clean.at(j, 1, t));
      out.at(j, 6, t) = static_cast<float>(
          std::hypot(vel[0][static_cast<std::size_t>(t)], vel[1][static_cast<std::size_t>(t)]));
    }
    for (int axis = 0; axis < 2; ++axis) {
      auto vs = rolling_filter(vel[axis], kFeatureSmoothSeconds, clean.fps, FilterMode::mean);
      auto as = rolling_filter(acc[axis], kFeatureSmoothSeconds, clean.fps, FilterMode::mean);
      for (int t = 0; t < T; ++t) {
        out.at(j, 2 + axis, t) = static_cast<float>(vs[static_cast<std::size_t>(t)]);
        out.at(j, 4 + axis, t) = static_cast<float>(as[static_cast<std::size_t>(t)]);
      }
    }
  }
  return out;
}

inline SequenceTensor compute_motion_features(const SequenceTensor& clean) {
  return compute_motion_features(from_sequence_tensor(clean));
}

}  // namespace stam
