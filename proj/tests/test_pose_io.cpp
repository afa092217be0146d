#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include <json.hpp>

#include "stam/pose_io.hpp"
#include "stam/rng.hpp"

using namespace stam;

namespace {

std::string frame_line(int index, double conf, int null_joint = -1) {
  nlohmann::json rec;
  rec["frame"] = index;
  auto& joints = rec["joints"] = nlohmann::json::array();
  for (int j = 0; j < kNumJoints; ++j) {
    if (j == null_joint)
      joints.push_back(nullptr);
    else
      joints.push_back({0.5 * j, 100.0 + j, conf});
  }
  return rec.dump();
}

RawPoseSequence random_raw(Rng& rng, int frames) {
  RawPoseSequence seq;
  seq.fps = 30.0f;
  for (int t = 0; t < frames; ++t) {
    RawPoseFrame f;
    f.frame_index = t;
    for (int j = 0; j < kNumJoints; ++j) {
      if (rng.uniform() < 0.1) {
        f.joints[j] = {0.0f, 0.0f, 0.0f};
        f.missing[j] = true;
      } else {
        f.joints[j] = {static_cast<float>(rng.uniform(-5, 5)),
                       static_cast<float>(rng.uniform(-5, 5)),
                       static_cast<float>(rng.uniform(0.2, 1.0))};
        f.missing[j] = f.joints[j][2] < kDefaultConfidenceThreshold;
      }
    }
    seq.frames.push_back(f);
  }
  return seq;
}

}  // namespace

TEST_CASE("parses well-formed frames", "[pose_io]") {
  std::stringstream in;
  for (int t = 0; t < 3; ++t) in << frame_line(t, 0.9) << "\n";
  auto seq = parse_pose_frames(in);
  REQUIRE(seq.length() == 3);
  for (const auto& f : seq.frames)
    for (int j = 0; j < kNumJoints; ++j) REQUIRE_FALSE(f.missing[j]);
  REQUIRE(seq.frames[1].joints[2][0] == Catch::Approx(1.0));
}

TEST_CASE("confidence below threshold marks joint missing", "[pose_io]") {
  nlohmann::json rec = nlohmann::json::parse(frame_line(0, 0.9));
  rec["joints"][4][2] = 0.0;
  std::stringstream in;
  in << rec.dump() << "\n";
  auto seq = parse_pose_frames(in, 0.1f);
  REQUIRE(seq.frames[0].missing[4]);
  REQUIRE_FALSE(seq.frames[0].missing[5]);
}

TEST_CASE("null joints are missing", "[pose_io]") {
  std::stringstream in;
  in << frame_line(0, 0.9, /*null_joint=*/7) << "\n";
  auto seq = parse_pose_frames(in);
  REQUIRE(seq.frames[0].missing[7]);
}

TEST_CASE("non-increasing frame indices are rejected", "[pose_io]") {
  std::stringstream in;
  in << frame_line(0, 0.9) << "\n" << frame_line(2, 0.9) << "\n" << frame_line(1, 0.9) << "\n";
  try {
    parse_pose_frames(in);
    FAIL("expected MalformedInput");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::malformed_input);
  }
}

TEST_CASE("empty stream is rejected", "[pose_io]") {
  std::stringstream in;
  try {
    parse_pose_frames(in);
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::empty_input);
  }
}

TEST_CASE("wrong joint count is rejected", "[pose_io]") {
  nlohmann::json rec = nlohmann::json::parse(frame_line(0, 0.9));
  rec["joints"].erase(17);
  std::stringstream in;
  in << rec.dump() << "\n";
  try {
    parse_pose_frames(in);
    FAIL("expected MalformedInput");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::malformed_input);
  }
}

TEST_CASE("missing count equals low-confidence-or-null count", "[pose_io]") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::stringstream in;
    const int frames = 1 + static_cast<int>(rng.bounded(5));
    std::vector<int> expected(frames, 0);
    const float threshold = 0.3f;
    for (int t = 0; t < frames; ++t) {
      nlohmann::json rec;
      rec["frame"] = t;
      auto& joints = rec["joints"] = nlohmann::json::array();
      for (int j = 0; j < kNumJoints; ++j) {
        const double roll = rng.uniform();
        if (roll < 0.15) {
          joints.push_back(nullptr);
          ++expected[t];
        } else {
          const double conf = rng.uniform();
          joints.push_back({1.0, 2.0, conf});
          if (conf < threshold) ++expected[t];
        }
      }
      in << rec.dump() << "\n";
    }
    auto seq = parse_pose_frames(in, threshold);
    for (int t = 0; t < frames; ++t) {
      int got = 0;
      for (int j = 0; j < kNumJoints; ++j) got += seq.frames[t].missing[j] ? 1 : 0;
      REQUIRE(got == expected[t]);
    }
  }
}

TEST_CASE("parse -> serialize -> parse is idempotent", "[pose_io]") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto seq = random_raw(rng, 4 + static_cast<int>(rng.bounded(6)));
    std::stringstream first;
    write_pose_jsonl(seq, first);
    auto parsed = parse_pose_frames(first);
    std::stringstream second;
    write_pose_jsonl(parsed, second);
    REQUIRE(first.str() == second.str());
  }
}

TEST_CASE("sequence roundtrip is bit-identical", "[pose_io]") {
  Rng rng(33);
  SequenceTensor seq(18, 7, 50, 30.0f);
  for (auto& v : seq.data) v = static_cast<float>(rng.uniform(-10, 10));
  std::stringstream buf;
  save_sequence(seq, buf);
  auto loaded = load_sequence(buf);
  REQUIRE(loaded.joints == 18);
  REQUIRE(loaded.channels == 7);
  REQUIRE(loaded.frames == 50);
  REQUIRE(loaded.fps == seq.fps);
  REQUIRE(loaded.data == seq.data);
}

TEST_CASE("saving an empty sequence fails", "[pose_io]") {
  SequenceTensor seq(18, 7, 0, 30.0f);
  std::stringstream buf;
  try {
    save_sequence(seq, buf);
    FAIL("expected EmptySequence");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::empty_sequence);
  }
}

TEST_CASE("corrupted magic is rejected", "[pose_io]") {
  SequenceTensor seq(18, 7, 5, 30.0f);
  std::stringstream buf;
  save_sequence(seq, buf);
  std::string bytes = buf.str();
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  try {
    load_sequence(bad);
    FAIL("expected FormatError");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::format_error);
  }
}

TEST_CASE("truncated payload is rejected", "[pose_io]") {
  SequenceTensor seq(18, 7, 5, 30.0f);
  std::stringstream buf;
  save_sequence(seq, buf);
  std::string bytes = buf.str();
  std::stringstream bad(bytes.substr(0, bytes.size() - 13));
  try {
    load_sequence(bad);
    FAIL("expected FormatError");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::format_error);
  }
}
