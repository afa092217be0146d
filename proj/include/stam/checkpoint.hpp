#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stam/error.hpp"
#include "stam/model.hpp"

namespace stam {

inline nlohmann::ordered_json stam_config_to_json(const StamConfig& cfg) {
  nlohmann::ordered_json j;
  j["clip_len"] = cfg.clip_len;
  j["clip_overlap"] = cfg.clip_overlap;
  j["channels"] = cfg.channels;
  j["t_kernels"] = cfg.t_kernels;
  j["t_strides"] = cfg.t_strides;
  j["d_u"] = cfg.d_u;
  j["d_h"] = cfg.d_h;
  j["attention_mode"] = attention_mode_name(cfg.attention_mode);
  j["dropout"] = cfg.dropout;
  j["input_channels"] = cfg.input_channels;
  return j;
}

inline StamConfig stam_config_from_json(const nlohmann::json& j) {
  StamConfig cfg;
  static const std::vector<std::string> known = {
      "clip_len", "clip_overlap", "channels", "t_kernels", "t_strides",
      "d_u",      "d_h",          "attention_mode", "dropout", "input_channels"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(std::find(known.begin(), known.end(), it.key()) != known.end(), Errc::config_invalid,
            "unknown model config key \"" + it.key() + "\"");
  }
  try {
    if (j.contains("clip_len")) cfg.clip_len = j["clip_len"].get<int>();
    if (j.contains("clip_overlap")) cfg.clip_overlap = j["clip_overlap"].get<int>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<std::array<int, 3>>();
    if (j.contains("t_kernels")) cfg.t_kernels = j["t_kernels"].get<std::array<int, 3>>();
    if (j.contains("t_strides")) cfg.t_strides = j["t_strides"].get<std::array<int, 3>>();
    if (j.contains("d_u")) cfg.d_u = j["d_u"].get<int>();
    if (j.contains("d_h")) cfg.d_h = j["d_h"].get<int>();
    if (j.contains("attention_mode"))
      cfg.attention_mode = attention_mode_from_name(j["attention_mode"].get<std::string>());
    if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
    if (j.contains("input_channels")) cfg.input_channels = j["input_channels"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::config_invalid, std::string("bad model config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace detail {
inline constexpr char kCkptMagic[9] = {'S', 'T', 'A', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint8_t kCkptVersion = 1;
}  // namespace detail

/// Checkpoint layout: magic "STAMCKPT1", version byte, length-prefixed config
/// JSON, u32 tensor count, then per tensor: u32 name length, name, u32 rank,
/// u32 dims, f32le data. Bit-exact.
inline void save_checkpoint(const std::filesystem::path& path, StamParams<float>& params,
                            const StamConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::file_not_found, "cannot open " + path.string() + " for writing");
  out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_le(out, detail::kCkptVersion);

  const std::string cfg_json = stam_config_to_json(cfg).dump();
  detail::write_le(out, static_cast<std::uint32_t>(cfg_json.size()));
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

  std::uint32_t count = 0;
  params.for_each_tensor([&](const std::string&, Tensor<float>&) { ++count; });
  detail::write_le(out, count);
  params.for_each_tensor([&](const std::string& name, Tensor<float>& t) {
    detail::write_le(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le(out, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) detail::write_le(out, static_cast<std::uint32_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  });
  require(out.good(), Errc::format_error, "checkpoint write failed");
}

struct Checkpoint {
  StamParams<float> params;
  StamConfig config;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  char magic[sizeof(detail::kCkptMagic)];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) == 0,
          Errc::format_error, "bad checkpoint magic");
  const auto version = detail::read_le<std::uint8_t>(in);
  require(version == detail::kCkptVersion, Errc::format_error,
          "unsupported checkpoint version " + std::to_string(version));

  const auto cfg_len = detail::read_le<std::uint32_t>(in);
  require(in.good() && cfg_len < (1u << 20), Errc::format_error, "bad config record length");
  std::string cfg_json(cfg_len, '\0');
  in.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  require(in.good(), Errc::format_error, "truncated config record");

  Checkpoint ckpt;
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(cfg_json);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format_error, std::string("bad config record: ") + e.what());
  }
  ckpt.config = stam_config_from_json(parsed);
  ckpt.params = StamParams<float>::init(ckpt.config, 0);

  const auto count = detail::read_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, Tensor<float>>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint32_t>(in);
    require(in.good() && name_len < 1024, Errc::format_error, "bad tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = detail::read_le<std::uint32_t>(in);
    require(in.good() && rank <= 8, Errc::format_error, "bad tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_le<std::uint32_t>(in));
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    require(in.gcount() == static_cast<std::streamsize>(t.numel() * sizeof(float)),
            Errc::format_error, "truncated tensor data for \"" + name + "\"");
    loaded.emplace_back(std::move(name), std::move(t));
  }

  std::size_t matched = 0;
  ckpt.params.for_each_tensor([&](const std::string& name, Tensor<float>& dst) {
    for (auto& [lname, lt] : loaded) {
      if (lname != name) continue;
      require(lt.shape == dst.shape, Errc::format_error,
              "tensor \"" + name + "\" has shape " + lt.shape_str() + ", expected " +
                  dst.shape_str());
      dst = lt;
      ++matched;
      return;
    }
    fail(Errc::format_error, "checkpoint is missing tensor \"" + name + "\"");
  });
  require(matched == loaded.size(), Errc::format_error, "checkpoint contains unknown tensors");
  return ckpt;
}

}  // namespace stam
