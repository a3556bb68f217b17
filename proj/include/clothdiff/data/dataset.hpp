#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "clothdiff/core/error.hpp"
#include "clothdiff/data/translation_map.hpp"
#include "clothdiff/io/pnm.hpp"
#include "clothdiff/sim/render.hpp"

namespace clothdiff::data {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kDatasetVersion = 1;
inline constexpr double kDepthUnitsPerMeter = 1e4;  // stored depth resolution 0.1 mm

struct DatasetInfo {
  int grid_h = 25;
  int grid_w = 25;
  double cloth_size = 1.0;
  sim::DepthCamera camera;
  int image_size = 96;
  std::uint64_t seed = 0;
  int episodes = 0;
  int actions_per_episode = 0;
};

struct Sample {
  sim::DepthImage raw;
  ClothMesh mesh;
  TranslationMap tmap;
};

struct Dataset {
  DatasetInfo info;
  CanonicalFlatMesh canonical;
  std::vector<Sample> samples;
};

/// Snaps depth to the stored 0.1 mm lattice so a write/read cycle is exact.
inline double quantize_depth(double meters) {
  require(meters >= 0.0 && meters * kDepthUnitsPerMeter <= 65535.0, ErrorKind::kInvalidArgument,
          "depth outside the storable range [0, 6.5535] m");
  return std::round(meters * kDepthUnitsPerMeter) / kDepthUnitsPerMeter;
}

/// Rounds coordinates to float precision, the precision of the stored mesh files.
inline ClothMesh round_to_float(ClothMesh m) {
  for (auto& v : m.vertices)
    for (int a = 0; a < 3; ++a) v[a] = static_cast<double>(static_cast<float>(v[a]));
  return m;
}

inline void write_f32(const fs::path& path, const std::vector<Vec3>& v) {
  std::string bytes(v.size() * 12, '\0');
  std::size_t o = 0;
  for (const auto& p : v)
    for (int a = 0; a < 3; ++a) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p[a]));
      for (int b = 0; b < 4; ++b) bytes[o++] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path.string());
}

inline std::vector<Vec3> read_f32(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() == count * 12, ErrorKind::kFormat,
          path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(count * 12));
  std::vector<Vec3> v(count);
  std::size_t o = 0;
  for (auto& p : v)
    for (int a = 0; a < 3; ++a) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o++])) << (8 * b);
      p[a] = static_cast<double>(std::bit_cast<float>(bits));
    }
  return v;
}

inline json camera_to_json(const sim::DepthCamera& c) {
  return {{"height", c.height}, {"rows", c.rows}, {"cols", c.cols}, {"meters_per_pixel", c.meters_per_pixel}};
}

inline sim::DepthCamera camera_from_json(const json& j) {
  sim::DepthCamera c;
  c.height = j.at("height").get<double>();
  c.rows = j.at("rows").get<int>();
  c.cols = j.at("cols").get<int>();
  c.meters_per_pixel = j.at("meters_per_pixel").get<double>();
  c.validate();
  return c;
}

inline json manifest_json(const Dataset& d) {
  return {{"version", kDatasetVersion},
          {"grid", {d.info.grid_h, d.info.grid_w}},
          {"cloth_size", {d.canonical.width, d.canonical.length}},
          {"camera", camera_to_json(d.info.camera)},
          {"image_size", d.info.image_size},
          {"sample_count", d.samples.size()},
          {"seed", d.info.seed},
          {"episodes", d.info.episodes},
          {"actions_per_episode", d.info.actions_per_episode},
          {"depth_units_per_meter", kDepthUnitsPerMeter}};
}

inline std::string sample_file(const char* stem, std::size_t i, const char* ext) {
  return std::string(stem) + "_" + std::to_string(i) + ext;
}

inline void write_dataset(const Dataset& d, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::kIo, "cannot create dataset directory: " + dir.string());
  const int h = d.info.grid_h, w = d.info.grid_w;
  require(d.canonical.mesh.grid_h == h && d.canonical.mesh.grid_w == w, ErrorKind::kShape,
          "canonical mesh does not match dataset grid");
  write_f32(dir / "canonical.f32", d.canonical.mesh.vertices);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    require(s.mesh.grid_h == h && s.mesh.grid_w == w && s.tmap.grid_h == h && s.tmap.grid_w == w, ErrorKind::kShape,
            "sample " + std::to_string(i) + " does not match dataset grid");
    io::PnmImage depth{s.raw.rows, s.raw.cols, 1, 65535, {}};
    io::PnmImage mask{s.raw.rows, s.raw.cols, 1, 255, {}};
    depth.samples.reserve(s.raw.depth.size());
    for (double m : s.raw.depth) depth.samples.push_back(static_cast<std::uint16_t>(std::lround(quantize_depth(m) * kDepthUnitsPerMeter)));
    for (auto b : s.raw.mask) mask.samples.push_back(b ? 255 : 0);
    io::write_pnm((dir / sample_file("depth", i, ".pgm")).string(), depth);
    io::write_pnm((dir / sample_file("mask", i, ".pgm")).string(), mask);
    write_f32(dir / sample_file("mesh", i, ".f32"), s.mesh.vertices);
    io::PnmImage tmap{h, w, 3, 255, std::vector<std::uint16_t>(s.tmap.levels.begin(), s.tmap.levels.end())};
    io::write_pnm((dir / sample_file("tmap", i, ".ppm")).string(), tmap);
  }
  std::ofstream out(dir / "manifest.json");
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write manifest in " + dir.string());
  out << manifest_json(d).dump(2) << '\n';
}

/// Reads the manifest only; validates the version.
inline json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(static_cast<bool>(in), ErrorKind::kIo, "no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed manifest.json: " + std::string(e.what()));
  }
  require(m.is_object() && m.contains("version"), ErrorKind::kFormat, "manifest.json lacks a version field");
  const json& v = m["version"];
  const bool ok = (v.is_number_integer() && v.get<int>() == kDatasetVersion) ||
                  (v.is_string() && v.get<std::string>() == std::to_string(kDatasetVersion));
  require(ok, ErrorKind::kFormat, "unsupported dataset version " + v.dump() + " (this build reads version 1)");
  return m;
}

inline std::size_t count_sample_files(const fs::path& dir) {
  static const std::regex pattern(R"(depth_\d+\.pgm)");
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), pattern)) ++n;
  return n;
}

inline Dataset read_dataset(const fs::path& dir, bool load_samples = true) {
  const json m = read_manifest(dir);
  Dataset d;
  std::size_t count = 0;
  try {
    d.info.grid_h = m.at("grid").at(0).get<int>();
    d.info.grid_w = m.at("grid").at(1).get<int>();
    d.canonical.width = m.at("cloth_size").at(0).get<double>();
    d.canonical.length = m.at("cloth_size").at(1).get<double>();
    d.info.cloth_size = d.canonical.width;
    d.info.camera = camera_from_json(m.at("camera"));
    d.info.image_size = m.at("image_size").get<int>();
    d.info.seed = m.at("seed").get<std::uint64_t>();
    d.info.episodes = m.value("episodes", 0);
    d.info.actions_per_episode = m.value("actions_per_episode", 0);
    count = m.at("sample_count").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed manifest.json: " + std::string(e.what()));
  }
  const std::size_t present = count_sample_files(dir);
  require(present == count, ErrorKind::kFormat,
          "manifest lists " + std::to_string(count) + " samples but " + dir.string() + " holds " +
              std::to_string(present));
  const int h = d.info.grid_h, w = d.info.grid_w;
  const auto n = static_cast<std::size_t>(h) * w;
  d.canonical.mesh = ClothMesh(h, w, read_f32(dir / "canonical.f32", n));
  if (!load_samples) return d;
  d.samples.resize(count);
  const auto& cam = d.info.camera;
  for (std::size_t i = 0; i < count; ++i) {
    Sample& s = d.samples[i];
    const io::PnmImage depth = io::read_pnm((dir / sample_file("depth", i, ".pgm")).string());
    const io::PnmImage mask = io::read_pnm((dir / sample_file("mask", i, ".pgm")).string());
    require(depth.channels == 1 && depth.rows == cam.rows && depth.cols == cam.cols && mask.channels == 1 &&
                mask.rows == cam.rows && mask.cols == cam.cols,
            ErrorKind::kFormat, "sample " + std::to_string(i) + " image size disagrees with camera record");
    s.raw.rows = cam.rows;
    s.raw.cols = cam.cols;
    s.raw.depth.resize(depth.samples.size());
    for (std::size_t k = 0; k < depth.samples.size(); ++k) s.raw.depth[k] = depth.samples[k] / kDepthUnitsPerMeter;
    s.raw.mask.resize(mask.samples.size());
    for (std::size_t k = 0; k < mask.samples.size(); ++k) s.raw.mask[k] = mask.samples[k] ? 1 : 0;
    s.mesh = ClothMesh(h, w, read_f32(dir / sample_file("mesh", i, ".f32"), n));
    const io::PnmImage tmap = io::read_pnm((dir / sample_file("tmap", i, ".ppm")).string());
    require(tmap.channels == 3 && tmap.rows == h && tmap.cols == w && tmap.maxval == 255, ErrorKind::kFormat,
            "sample " + std::to_string(i) + " translation map has the wrong size");
    s.tmap = TranslationMap(h, w);
    for (std::size_t k = 0; k < tmap.samples.size(); ++k) s.tmap.levels[k] = static_cast<std::uint8_t>(tmap.samples[k]);
  }
  return d;
}

}  // namespace clothdiff::data
