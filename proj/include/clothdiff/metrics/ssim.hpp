#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/data/translation_map.hpp"

namespace clothdiff::metrics {

/// Row-major, channel-interleaved image with values on a 0..255 scale.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> values;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int r, int col, int ch) { return values[(static_cast<std::size_t>(r) * width + col) * channels + ch]; }
  double at(int r, int col, int ch) const { return values[(static_cast<std::size_t>(r) * width + col) * channels + ch]; }
};

inline Image map_image(const data::TranslationMap& t) {
  Image im(t.grid_h, t.grid_w, 3);
  for (std::size_t k = 0; k < t.levels.size(); ++k) im.values[k] = t.levels[k];
  return im;
}

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

/// Mean structural similarity over all fully contained Gaussian windows and all
/// channels. Images smaller than the window use the largest odd window that
/// fits, with the same Gaussian profile renormalised.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  require(a.height == b.height && a.width == b.width && a.channels == b.channels, ErrorKind::kShape,
          "SSIM images differ in size");
  require(a.height >= 1 && a.width >= 1 && a.channels >= 1 && a.values.size() == b.values.size() &&
              a.values.size() == static_cast<std::size_t>(a.height) * a.width * a.channels,
          ErrorKind::kShape, "SSIM image has inconsistent dimensions");
  int win = std::min({cfg.window, a.height, a.width});
  if (win % 2 == 0) --win;
  const int half = win / 2;
  std::vector<double> g(static_cast<std::size_t>(win));
  double gs = 0.0;
  for (int i = 0; i < win; ++i) gs += g[static_cast<std::size_t>(i)] = std::exp(-(i - half) * (i - half) / (2 * cfg.sigma * cfg.sigma));
  for (double& v : g) v /= gs;

  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  double total = 0.0;
  long count = 0;
  for (int ch = 0; ch < a.channels; ++ch)
    for (int r = 0; r + win <= a.height; ++r)
      for (int c = 0; c + win <= a.width; ++c) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double w = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            const double x = a.at(r + i, c + j, ch), y = b.at(r + i, c + j, ch);
            mx += w * x;
            my += w * y;
            xx += w * x * x;
            yy += w * y * y;
            xy += w * x * y;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

inline double ssim(const data::TranslationMap& a, const data::TranslationMap& b, const SsimConfig& cfg = {}) {
  return ssim(map_image(a), map_image(b), cfg);
}

}  // namespace clothdiff::metrics
