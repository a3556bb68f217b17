#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/sim/render.hpp"

namespace clothdiff::data {

inline constexpr double kDepthLow = 55.0;
inline constexpr double kDepthHigh = 200.0;

/// Model input: out_size x out_size gray levels, background exactly 0, cloth in [55, 200].
struct DepthObservation {
  int size = 0;
  std::vector<float> normalized;
  std::vector<std::uint8_t> mask;
};

/// Crops to the cloth, centres its centroid, rescales isotropically and
/// standardises depth over the cloth pixels.
///
/// The scale maps the largest centroid-to-bounding-box-edge distance onto half
/// the output width less one pixel, so the cloth fills the image without
/// clipping even when the centroid sits off the box centre.
inline DepthObservation preprocess_depth(const sim::DepthImage& raw, int out_size) {
  require(out_size >= 8, ErrorKind::kInvalidArgument, "preprocessed image must be at least 8x8");
  require(raw.depth.size() == static_cast<std::size_t>(raw.rows) * raw.cols && raw.mask.size() == raw.depth.size(),
          ErrorKind::kShape, "depth and mask sizes disagree");
  double cx = 0.0, cy = 0.0;
  int rmin = raw.rows, rmax = -1, cmin = raw.cols, cmax = -1;
  std::size_t count = 0;
  for (int r = 0; r < raw.rows; ++r)
    for (int c = 0; c < raw.cols; ++c) {
      if (!raw.mask[raw.pixel(r, c)]) continue;
      cx += c + 0.5;
      cy += r + 0.5;
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
      ++count;
    }
  require(count > 0, ErrorKind::kDegenerate, "depth mask is empty; nothing to preprocess");
  // Sampling origins live on a 1/1024-pixel lattice so that integer shifts of
  // the input reproduce the output exactly.
  auto snap = [](double v) { return std::round(v * 1024.0) / 1024.0; };
  cx = snap(cx / static_cast<double>(count));
  cy = snap(cy / static_cast<double>(count));
  const double half = std::max({cx - cmin, cmax + 1 - cx, cy - rmin, rmax + 1 - cy});
  const double scale = (out_size / 2.0 - 1.0) / half;  // output pixels per input pixel, one-pixel border

  DepthObservation obs;
  obs.size = out_size;
  const std::size_t n = static_cast<std::size_t>(out_size) * out_size;
  std::vector<double> depth(n, 0.0);
  double sum = 0.0;
  std::size_t hits = 0;
  auto resample = [&](double x0, double y0) {
    obs.normalized.assign(n, 0.f);
    obs.mask.assign(n, 0);
    sum = 0.0;
    hits = 0;
    double ox = 0.0, oy = 0.0;
    for (int R = 0; R < out_size; ++R)
      for (int C = 0; C < out_size; ++C) {
        const int c = static_cast<int>(std::floor(x0 + (C + 0.5 - out_size / 2.0) / scale));
        const int r = static_cast<int>(std::floor(y0 + (R + 0.5 - out_size / 2.0) / scale));
        if (r < 0 || c < 0 || r >= raw.rows || c >= raw.cols || !raw.mask[raw.pixel(r, c)]) continue;
        const std::size_t k = static_cast<std::size_t>(R) * out_size + C;
        obs.mask[k] = 1;
        depth[k] = raw.depth[raw.pixel(r, c)];
        sum += depth[k];
        ox += C + 0.5;
        oy += R + 0.5;
        ++hits;
      }
    if (hits == 0) return Vec2(0.0, 0.0);
    return Vec2(ox / static_cast<double>(hits) - out_size / 2.0, oy / static_cast<double>(hits) - out_size / 2.0);
  };
  // Nearest-neighbour sampling offsets the resampled centroid by up to a
  // pixel; nudge the sampling origin and keep the best-centred pass.
  Vec2 best_origin(cx, cy);
  double best_err = std::numeric_limits<double>::infinity();
  Vec2 origin(cx, cy);
  for (int pass = 0; pass < 8; ++pass) {
    const Vec2 e = resample(origin.x(), origin.y());
    const double err = e.cwiseAbs().maxCoeff();
    if (err < best_err) {
      best_err = err;
      best_origin = origin;
    }
    if (err <= 0.25 || hits == 0) break;
    origin = Vec2(snap(origin.x() + e.x() / scale), snap(origin.y() + e.y() / scale));
  }
  if (best_err > 0.25) {
    const Vec2 centre = best_origin;
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j) {
        const Vec2 o(snap(centre.x() + 0.25 * j / scale), snap(centre.y() + 0.25 * i / scale));
        const double err = resample(o.x(), o.y()).cwiseAbs().maxCoeff();
        if (err < best_err) {
          best_err = err;
          best_origin = o;
        }
      }
  }
  resample(best_origin.x(), best_origin.y());
  require(hits > 0, ErrorKind::kDegenerate, "cloth vanished during resampling");
  const double mean = sum / static_cast<double>(hits);
  double var = 0.0, lo = depth[0], hi = depth[0];
  bool first = true;
  for (std::size_t k = 0; k < n; ++k) {
    if (!obs.mask[k]) continue;
    var += (depth[k] - mean) * (depth[k] - mean);
    lo = first ? depth[k] : std::min(lo, depth[k]);
    hi = first ? depth[k] : std::max(hi, depth[k]);
    first = false;
  }
  const double sigma = hi > lo ? std::sqrt(var / static_cast<double>(hits)) : 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!obs.mask[k]) continue;
    const double z = sigma > 0.0 ? std::clamp((depth[k] - mean) / (3.0 * sigma), -1.0, 1.0) : 0.0;
    obs.normalized[k] = static_cast<float>(kDepthLow + (z + 1.0) / 2.0 * (kDepthHigh - kDepthLow));
  }
  return obs;
}

/// Uniform noise of +-amplitude gray levels on cloth pixels, kept inside [55, 200].
inline void perturb_depth(DepthObservation& obs, double amplitude, Rng& rng) {
  for (std::size_t k = 0; k < obs.normalized.size(); ++k) {
    if (!obs.mask[k]) continue;
    const double v = obs.normalized[k] + rng.uniform(-amplitude, amplitude);
    obs.normalized[k] = static_cast<float>(std::clamp(v, kDepthLow, kDepthHigh));
  }
}

}  // namespace clothdiff::data
