#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stam/error.hpp"
#include "stam/layout.hpp"

namespace stam {

inline constexpr float kDefaultConfidenceThreshold = 0.1f;

/// One frame of raw 2D keypoints: (x, y, confidence) per joint plus a
/// missingness flag. Coordinates of missing joints are zeroed.
struct RawPoseFrame {
  std::int64_t frame_index = 0;
  std::array<std::array<float, 3>, kNumJoints> joints{};
  std::array<bool, kNumJoints> missing{};
};

struct RawPoseSequence {
  std::vector<RawPoseFrame> frames;
  float fps = 30.0f;
  std::string source_id;

  int length() const { return static_cast<int>(frames.size()); }
};

/// Parses line-delimited keypoint records:
///   {"frame": n, "joints": [[x, y, confidence] | null] * 18}
/// A joint is missing when it is null or its confidence is below the
/// threshold. Frame indices must be strictly increasing.
inline RawPoseSequence parse_pose_frames(std::istream& in,
                                         float confidence_threshold = kDefaultConfidenceThreshold,
                                         float fps = 30.0f, std::string source_id = "") {
  require(fps > 0.0f, Errc::malformed_input, "fps must be positive");
  RawPoseSequence seq;
  seq.fps = fps;
  seq.source_id = std::move(source_id);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::malformed_input, "line " + std::to_string(line_no) + ": " + e.what());
    }
    require(rec.is_object() && rec.contains("frame") && rec.contains("joints"),
            Errc::malformed_input,
            "line " + std::to_string(line_no) + ": record needs \"frame\" and \"joints\"");
    require(rec["frame"].is_number_integer(), Errc::malformed_input,
            "line " + std::to_string(line_no) + ": frame index must be an integer");

    RawPoseFrame frame;
    frame.frame_index = rec["frame"].get<std::int64_t>();
    require(frame.frame_index >= 0, Errc::malformed_input,
            "line " + std::to_string(line_no) + ": negative frame index");
    if (!seq.frames.empty())
      require(frame.frame_index > seq.frames.back().frame_index, Errc::malformed_input,
              "line " + std::to_string(line_no) + ": frame indices must be strictly increasing");

    const auto& joints = rec["joints"];
    require(joints.is_array() && joints.size() == kNumJoints, Errc::malformed_input,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(kNumJoints) +
                " joints");
    for (int j = 0; j < kNumJoints; ++j) {
      const auto& entry = joints[static_cast<std::size_t>(j)];
      auto& out = frame.joints[static_cast<std::size_t>(j)];
      if (entry.is_null()) {
        out = {0.0f, 0.0f, 0.0f};
        frame.missing[static_cast<std::size_t>(j)] = true;
        continue;
      }
      require(entry.is_array() && entry.size() == 3 && entry[0].is_number() &&
                  entry[1].is_number() && entry[2].is_number(),
              Errc::malformed_input,
              "line " + std::to_string(line_no) + ": joint " + std::to_string(j) +
                  " must be null or [x, y, confidence]");
      out[0] = entry[0].get<float>();
      out[1] = entry[1].get<float>();
      out[2] = entry[2].get<float>();
      require(std::isfinite(out[0]) && std::isfinite(out[1]) && std::isfinite(out[2]),
              Errc::malformed_input,
              "line " + std::to_string(line_no) + ": non-finite joint coordinates");
      frame.missing[static_cast<std::size_t>(j)] = out[2] < confidence_threshold;
    }
    seq.frames.push_back(frame);
  }
  require(!seq.frames.empty(), Errc::empty_input, "no frames in keypoint stream");
  return seq;
}

inline RawPoseSequence parse_pose_file(const std::filesystem::path& path,
                                       float confidence_threshold = kDefaultConfidenceThreshold,
                                       float fps = 30.0f) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  return parse_pose_frames(in, confidence_threshold, fps, path.stem().string());
}

/// Inverse of parse_pose_frames; missing joints are written as null.
inline void write_pose_jsonl(const RawPoseSequence& seq, std::ostream& out) {
  for (const auto& frame : seq.frames) {
    nlohmann::ordered_json rec;
    rec["frame"] = frame.frame_index;
    auto& joints = rec["joints"] = nlohmann::ordered_json::array();
    for (int j = 0; j < kNumJoints; ++j) {
      if (frame.missing[static_cast<std::size_t>(j)] &&
          frame.joints[static_cast<std::size_t>(j)][2] == 0.0f) {
        joints.push_back(nullptr);
      } else {
        const auto& v = frame.joints[static_cast<std::size_t>(j)];
        joints.push_back({v[0], v[1], v[2]});
      }
    }
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sequence tensor container and its binary file format.
// ---------------------------------------------------------------------------

/// Dense (joints x channels x frames) float32 tensor with frame-rate
/// metadata. Used for both normalized coordinates (channels=2) and motion
/// features (channels=7). The label is attached from dataset metadata and is
/// not part of the file format.
struct SequenceTensor {
  int joints = 0;
  int channels = 0;
  int frames = 0;
  float fps = 30.0f;
  std::vector<float> data;  // row-major: (j * channels + c) * frames + t
  std::optional<int> label;

  SequenceTensor() = default;
  SequenceTensor(int j, int c, int t, float f)
      : joints(j), channels(c), frames(t), fps(f),
        data(static_cast<std::size_t>(j) * static_cast<std::size_t>(c) * static_cast<std::size_t>(t),
             0.0f) {}

  float& at(int j, int c, int t) {
    return data[(static_cast<std::size_t>(j) * static_cast<std::size_t>(channels) +
                 static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(frames) +
                static_cast<std::size_t>(t)];
  }
  float at(int j, int c, int t) const {
    return data[(static_cast<std::size_t>(j) * static_cast<std::size_t>(channels) +
                 static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(frames) +
                static_cast<std::size_t>(t)];
  }
};

namespace detail {

inline constexpr char kSeqMagic[8] = {'S', 'T', 'A', 'M', 'S', 'E', 'Q', '1'};
inline constexpr std::uint8_t kSeqVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  // Host is little-endian on every supported target; write bytes directly.
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace detail

/// Binary layout: magic "STAMSEQ1", version byte, u32le joints/channels/
/// frames, f32le fps, then row-major f32le data.
inline void save_sequence(const SequenceTensor& seq, std::ostream& out) {
  require(seq.frames > 0, Errc::empty_sequence, "refusing to save a sequence with 0 frames");
  require(seq.joints > 0 && seq.channels > 0, Errc::empty_sequence,
          "sequence dimensions must be positive");
  require(seq.data.size() == static_cast<std::size_t>(seq.joints) *
                                 static_cast<std::size_t>(seq.channels) *
                                 static_cast<std::size_t>(seq.frames),
          Errc::shape_mismatch, "sequence data length does not match dimensions");
  out.write(detail::kSeqMagic, sizeof(detail::kSeqMagic));
  detail::write_le(out, detail::kSeqVersion);
  detail::write_le(out, static_cast<std::uint32_t>(seq.joints));
  detail::write_le(out, static_cast<std::uint32_t>(seq.channels));
  detail::write_le(out, static_cast<std::uint32_t>(seq.frames));
  detail::write_le(out, seq.fps);
  out.write(reinterpret_cast<const char*>(seq.data.data()),
            static_cast<std::streamsize>(seq.data.size() * sizeof(float)));
  require(out.good(), Errc::format_error, "write failed");
}

inline void save_sequence(const SequenceTensor& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::file_not_found, "cannot open " + path.string() + " for writing");
  save_sequence(seq, out);
}

inline SequenceTensor load_sequence(std::istream& in) {
  char magic[sizeof(detail::kSeqMagic)];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, detail::kSeqMagic, sizeof(magic)) == 0,
          Errc::format_error, "bad sequence magic");
  auto version = detail::read_le<std::uint8_t>(in);
  require(version == detail::kSeqVersion, Errc::format_error,
          "unsupported sequence version " + std::to_string(version));
  auto joints = detail::read_le<std::uint32_t>(in);
  auto channels = detail::read_le<std::uint32_t>(in);
  auto frames = detail::read_le<std::uint32_t>(in);
  auto fps = detail::read_le<float>(in);
  require(in.good(), Errc::format_error, "truncated sequence header");
  require(joints > 0 && channels > 0 && frames > 0 && joints <= 1024 && channels <= 1024,
          Errc::format_error, "implausible sequence dimensions");
  require(fps > 0.0f && std::isfinite(fps), Errc::format_error, "bad fps");
  SequenceTensor seq(static_cast<int>(joints), static_cast<int>(channels),
                     static_cast<int>(frames), fps);
  in.read(reinterpret_cast<char*>(seq.data.data()),
          static_cast<std::streamsize>(seq.data.size() * sizeof(float)));
  require(in.gcount() == static_cast<std::streamsize>(seq.data.size() * sizeof(float)),
          Errc::format_error, "truncated sequence data");
  return seq;
}

inline SequenceTensor load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  return load_sequence(in);
}

}  // namespace stam
