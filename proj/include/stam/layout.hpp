#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "stam/error.hpp"

namespace stam {

inline constexpr int kNumJoints = 18;

// Joint indices of the 18-keypoint skeleton.
namespace joints {
inline constexpr int nose = 0;
inline constexpr int neck = 1;
inline constexpr int right_shoulder = 2;
inline constexpr int right_elbow = 3;
inline constexpr int right_wrist = 4;
inline constexpr int left_shoulder = 5;
inline constexpr int left_elbow = 6;
inline constexpr int left_wrist = 7;
inline constexpr int right_hip = 8;
inline constexpr int right_knee = 9;
inline constexpr int right_ankle = 10;
inline constexpr int left_hip = 11;
inline constexpr int left_knee = 12;
inline constexpr int left_ankle = 13;
inline constexpr int right_eye = 14;
inline constexpr int left_eye = 15;
inline constexpr int right_ear = 16;
inline constexpr int left_ear = 17;
}  // namespace joints

/// Skeleton description: joint names in index order, the limb edges, and the
/// upper/lower body partition used by pose normalization.
struct JointLayout {
  std::array<std::string, kNumJoints> joint_names;
  std::vector<std::pair<int, int>> edges;  // undirected limb connections
  std::vector<int> upper_body;             // rotated about the shoulder midpoint
  std::vector<int> lower_body;             // rotated about the hip midpoint
};

inline const JointLayout& default_joint_layout() {
  static const JointLayout layout = [] {
    JointLayout l;
    l.joint_names = {"nose",          "neck",          "right_shoulder", "right_elbow",
                     "right_wrist",   "left_shoulder", "left_elbow",     "left_wrist",
                     "right_hip",     "right_knee",    "right_ankle",    "left_hip",
                     "left_knee",     "left_ankle",    "right_eye",      "left_eye",
                     "right_ear",     "left_ear"};
    l.edges = {{0, 1},  {1, 2},   {2, 3},   {3, 4},  {1, 5},  {5, 6},
               {6, 7},  {1, 8},   {8, 9},   {9, 10}, {1, 11}, {11, 12},
               {12, 13}, {0, 14}, {14, 16}, {0, 15}, {15, 17}};
    l.upper_body = {0, 1, 2, 3, 4, 5, 6, 7, 14, 15, 16, 17};
    l.lower_body = {8, 9, 10, 11, 12, 13};
    return l;
  }();
  return layout;
}

/// Checks the layout invariants: 18 joints, 17 edges forming a connected tree.
inline void validate_layout(const JointLayout& layout) {
  require(layout.edges.size() == static_cast<std::size_t>(kNumJoints - 1), Errc::config_invalid,
          "layout must have exactly 17 edges");
  std::array<int, kNumJoints> parent{};
  for (int i = 0; i < kNumJoints; ++i) parent[static_cast<std::size_t>(i)] = i;
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (auto [a, b] : layout.edges) {
    require(a >= 0 && a < kNumJoints && b >= 0 && b < kNumJoints && a != b, Errc::config_invalid,
            "edge endpoints out of range");
    int ra = find(a), rb = find(b);
    require(ra != rb, Errc::config_invalid, "edge list contains a cycle");
    parent[static_cast<std::size_t>(ra)] = rb;
  }
  int root = find(0);
  for (int i = 1; i < kNumJoints; ++i)
    require(find(i) == root, Errc::config_invalid, "edge list is not connected");
  std::array<bool, kNumJoints> seen{};
  for (int j : layout.upper_body) seen[static_cast<std::size_t>(j)] = true;
  for (int j : layout.lower_body) {
    require(!seen[static_cast<std::size_t>(j)], Errc::config_invalid,
            "upper/lower body partition overlaps");
    seen[static_cast<std::size_t>(j)] = true;
  }
  for (int i = 0; i < kNumJoints; ++i)
    require(seen[static_cast<std::size_t>(i)], Errc::config_invalid,
            "upper/lower body partition must cover all joints");
}

}  // namespace stam
