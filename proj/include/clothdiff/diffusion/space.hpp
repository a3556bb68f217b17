#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/data/translation_map.hpp"

namespace clothdiff::diffusion {

/// Affine map between 8-bit translation-map levels and the model's working
/// range: x = q / 127.5 - 1. Working maps are channel-major [3, H, W] while
/// stored maps interleave xyz per vertex.
struct DiffusionSpace {
  static double to_working(std::uint8_t q) { return q / 127.5 - 1.0; }

  static std::uint8_t to_level(double x) {
    return static_cast<std::uint8_t>(std::clamp(std::round((x + 1.0) * 127.5), 0.0, 255.0));
  }

  static std::vector<float> encode(const data::TranslationMap& t) {
    const std::size_t hw = static_cast<std::size_t>(t.grid_h) * t.grid_w;
    require(t.levels.size() == 3 * hw, ErrorKind::kShape, "translation map has the wrong number of levels");
    std::vector<float> x(3 * hw);
    for (std::size_t k = 0; k < hw; ++k)
      for (std::size_t c = 0; c < 3; ++c) x[c * hw + k] = static_cast<float>(to_working(t.levels[3 * k + c]));
    return x;
  }

  static data::TranslationMap decode(const std::vector<float>& x, int grid_h, int grid_w) {
    const std::size_t hw = static_cast<std::size_t>(grid_h) * grid_w;
    require(x.size() == 3 * hw, ErrorKind::kShape, "working map has the wrong number of values");
    data::TranslationMap t(grid_h, grid_w);
    for (std::size_t k = 0; k < hw; ++k)
      for (std::size_t c = 0; c < 3; ++c) t.levels[3 * k + c] = to_level(x[c * hw + k]);
    return t;
  }

  /// Continuous normalised displacement (xyz interleaved) without quantisation.
  static std::vector<double> to_normalized(const std::vector<float>& x, int grid_h, int grid_w) {
    const std::size_t hw = static_cast<std::size_t>(grid_h) * grid_w;
    require(x.size() == 3 * hw, ErrorKind::kShape, "working map has the wrong number of values");
    std::vector<double> tau(3 * hw);
    for (std::size_t k = 0; k < hw; ++k)
      for (std::size_t c = 0; c < 3; ++c) tau[3 * k + c] = data::kMapClip * std::clamp<double>(x[c * hw + k], -1.0, 1.0);
    return tau;
  }
};

}  // namespace clothdiff::diffusion
