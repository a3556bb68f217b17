#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::sim {

/// Orthographic top-down camera centred over the world origin. Pixel (r, c)
/// covers u in [c, c+1), v in [r, r+1) with u = x / mpp + cols / 2 and
/// v = y / mpp + rows / 2; image rows follow +y and columns follow +x.
struct DepthCamera {
  double height = 1.0;  // m above the ground plane
  int rows = 160;
  int cols = 160;
  double meters_per_pixel = 0.015;

  void validate() const {
    require(rows >= 16 && cols >= 16, ErrorKind::kInvalidArgument, "camera image must be at least 16x16");
    require(height > 0.0 && meters_per_pixel > 0.0, ErrorKind::kInvalidArgument, "camera height and scale must be positive");
  }

  Vec2 to_pixel(const Vec2& xy) const {
    return {xy.x() / meters_per_pixel + cols / 2.0, xy.y() / meters_per_pixel + rows / 2.0};
  }
  Vec2 to_world(const Vec2& uv) const {
    return {(uv.x() - cols / 2.0) * meters_per_pixel, (uv.y() - rows / 2.0) * meters_per_pixel};
  }
  double half_extent_x() const { return cols * meters_per_pixel / 2.0; }
  double half_extent_y() const { return rows * meters_per_pixel / 2.0; }
};

struct DepthImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> depth;    // m from the camera
  std::vector<std::uint8_t> mask;  // 1 where the cloth is visible

  std::size_t pixel(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
  std::size_t mask_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

namespace detail {

inline double edge(const Vec2& a, const Vec2& b, const Vec2& q) {
  return (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
}

}  // namespace detail

/// Rasterises world triangles into a height buffer (max height per pixel centre).
/// `height` must be pre-filled; `covered` marks pixels hit by any triangle.
inline void rasterize_max_height(const ClothMesh& mesh, const DepthCamera& cam, std::vector<double>& height,
                                 std::vector<std::uint8_t>& covered) {
  for (const auto& f : mesh.faces()) {
    Vec2 p[3];
    double z[3];
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = mesh.vertices[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])];
      p[k] = cam.to_pixel(v.head<2>());
      z[k] = v.z();
    }
    const double area = detail::edge(p[0], p[1], p[2]);
    if (std::abs(area) < 1e-12) continue;
    const double umin = std::min({p[0].x(), p[1].x(), p[2].x()}), umax = std::max({p[0].x(), p[1].x(), p[2].x()});
    const double vmin = std::min({p[0].y(), p[1].y(), p[2].y()}), vmax = std::max({p[0].y(), p[1].y(), p[2].y()});
    const int c0 = std::max(0, static_cast<int>(std::floor(umin - 0.5))), c1 = std::min(cam.cols - 1, static_cast<int>(std::ceil(umax)));
    const int r0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5))), r1 = std::min(cam.rows - 1, static_cast<int>(std::ceil(vmax)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const Vec2 q(c + 0.5, r + 0.5);
        const double w0 = detail::edge(p[1], p[2], q) / area;
        const double w1 = detail::edge(p[2], p[0], q) / area;
        const double w2 = detail::edge(p[0], p[1], q) / area;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double hz = w0 * z[0] + w1 * z[1] + w2 * z[2];
        const std::size_t k = static_cast<std::size_t>(r) * cam.cols + c;
        if (!covered[k] || hz > height[k]) height[k] = hz;
        covered[k] = 1;
      }
  }
}

/// Z-buffered top-down depth: camera height minus the topmost surface height;
/// background pixels see the ground.
inline DepthImage render_depth(const ClothMesh& mesh, const DepthCamera& cam, double ground = 0.0) {
  cam.validate();
  DepthImage img;
  img.rows = cam.rows;
  img.cols = cam.cols;
  std::vector<double> height(static_cast<std::size_t>(cam.rows) * cam.cols, ground);
  img.mask.assign(height.size(), 0);
  if (mesh.size() > 0) rasterize_max_height(mesh, cam, height, img.mask);
  img.depth.resize(height.size());
  for (std::size_t k = 0; k < height.size(); ++k) img.depth[k] = cam.height - (img.mask[k] ? height[k] : ground);
  return img;
}

}  // namespace clothdiff::sim
