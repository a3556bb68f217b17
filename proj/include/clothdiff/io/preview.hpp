#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/data/translation_map.hpp"
#include "clothdiff/io/pnm.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"
#include "clothdiff/sim/render.hpp"

namespace clothdiff::io {

struct PreviewConfig {
  sim::DepthCamera camera;
  std::optional<std::pair<double, double>> height_range;  // shared shading range; defaults to the mesh's own
};

/// Top-down gray render (three equal channels): background black, cloth shaded from 64 (lowest) to 255
/// (highest); a flat cloth renders at a constant 160.
inline PnmImage preview_image(const ClothMesh& mesh, const PreviewConfig& cfg = {}) {
  mesh.validate();
  cfg.camera.validate();
  const auto& cam = cfg.camera;
  std::vector<double> height(static_cast<std::size_t>(cam.rows) * cam.cols, 0.0);
  std::vector<std::uint8_t> covered(height.size(), 0);
  sim::rasterize_max_height(mesh, cam, height, covered);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  if (cfg.height_range) {
    std::tie(lo, hi) = *cfg.height_range;
  } else {
    for (const auto& v : mesh.vertices) {
      lo = std::min(lo, v.z());
      hi = std::max(hi, v.z());
    }
  }
  PnmImage img;
  img.rows = cam.rows;
  img.cols = cam.cols;
  img.channels = 3;
  img.samples.assign(height.size() * 3, 0);
  for (std::size_t k = 0; k < height.size(); ++k) {
    if (!covered[k]) continue;
    const double t = hi > lo ? std::clamp((height[k] - lo) / (hi - lo), 0.0, 1.0) : 0.5;
    const auto shade = static_cast<std::uint16_t>(hi > lo ? std::lround(64.0 + 191.0 * t) : 160);
    std::fill_n(img.samples.begin() + static_cast<std::ptrdiff_t>(3 * k), 3, shade);
  }
  return img;
}

/// The map as an RGB image, each grid vertex drawn as a scale x scale block.
inline PnmImage preview_image(const data::TranslationMap& t, int scale = 8) {
  require(scale >= 1, ErrorKind::kInvalidArgument, "preview scale must be positive");
  require(t.grid_h >= 1 && t.grid_w >= 1 && t.levels.size() == static_cast<std::size_t>(t.grid_h) * t.grid_w * 3,
          ErrorKind::kShape, "translation map has inconsistent dimensions");
  PnmImage img;
  img.rows = t.grid_h * scale;
  img.cols = t.grid_w * scale;
  img.channels = 3;
  img.samples.resize(static_cast<std::size_t>(img.rows) * img.cols * 3);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.samples[(static_cast<std::size_t>(r) * img.cols + c) * 3 + ch] =
            t.levels[(static_cast<std::size_t>(r / scale) * t.grid_w + c / scale) * 3 + ch];
  return img;
}

inline void render_preview(const ClothMesh& mesh, const std::string& path, const PreviewConfig& cfg = {}) {
  write_pnm(path, preview_image(mesh, cfg));
}

inline void render_preview(const data::TranslationMap& t, const std::string& path, int scale = 8) {
  write_pnm(path, preview_image(t, scale));
}

}  // namespace clothdiff::io
