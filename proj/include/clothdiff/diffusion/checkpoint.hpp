#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "clothdiff/core/error.hpp"
#include "clothdiff/diffusion/denoiser.hpp"
#include "clothdiff/diffusion/schedule.hpp"

namespace clothdiff::diffusion {

inline constexpr char kCheckpointMagic[4] = {'R', 'G', 'D', '1'};

struct Checkpoint {
  DenoiserNet net;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  json config;  // resolved run configuration, stored verbatim
};

/// Layout: "RGD1", u32 LE metadata length, metadata JSON, then every parameter
/// as f32 LE; encoder tensors first, then denoiser tensors, each in the order
/// listed under "layout" in the metadata.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json layout = json::array();
  auto list = [&](const nn::Graph& g) {
    for (const auto& p : g.params()) layout.push_back({{"name", p.name}, {"shape", p.shape}});
  };
  list(ck.net.encoder);
  list(ck.net.denoiser);
  const json meta = {{"architecture", to_json(ck.net.config)},
                     {"schedule", {{"T", ck.schedule.T}, {"kind", schedule_kind_name(ck.schedule.kind)}}},
                     {"seed", ck.seed},
                     {"epoch", ck.epoch},
                     {"parameter_count", ck.net.parameter_count()},
                     {"layout", layout},
                     {"config", ck.config}};
  const std::string text = meta.dump();
  std::string bytes(kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((len >> (8 * b)) & 0xff));
  bytes += text;
  bytes.reserve(bytes.size() + 4 * ck.net.parameter_count());
  auto put = [&](const nn::ParamSet<float>& ps) {
    for (const auto& t : ps)
      for (float v : t.storage()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
      }
  };
  put(ck.net.encoder_params);
  put(ck.net.denoiser_params);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open checkpoint for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 8 && bytes.compare(0, 4, kCheckpointMagic, 4) == 0, ErrorKind::kFormat,
          path.string() + " is not a checkpoint (bad magic)");
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  require(bytes.size() >= 8 + static_cast<std::size_t>(len), ErrorKind::kFormat, "checkpoint metadata is truncated");
  Checkpoint ck;
  try {
    const json meta = json::parse(bytes.substr(8, len));
    const DenoiserConfig cfg = denoiser_config_from_json(meta.at("architecture"));
    ck.schedule = make_schedule(meta.at("schedule").at("T").get<int>(),
                                parse_schedule_kind(meta.at("schedule").at("kind").get<std::string>()));
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.epoch = meta.at("epoch").get<std::int64_t>();
    ck.config = meta.value("config", json::object());
    ck.net = make_denoiser(cfg, 0);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint metadata: " + std::string(e.what()));
  }
  const std::size_t expected = 8 + static_cast<std::size_t>(len) + 4 * ck.net.parameter_count();
  require(bytes.size() == expected, ErrorKind::kFormat,
          "checkpoint holds " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expected));
  std::size_t o = 8 + len;
  auto get = [&](nn::ParamSet<float>& ps) {
    for (auto& t : ps)
      for (float& v : t.storage()) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o++])) << (8 * b);
        v = std::bit_cast<float>(bits);
      }
  };
  get(ck.net.encoder_params);
  get(ck.net.denoiser_params);
  return ck;
}

}  // namespace clothdiff::diffusion
