#pragma once

#include <Eigen/Core>

#include <array>
#include <utility>
#include <vector>

#include "clothdiff/core/error.hpp"

namespace clothdiff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Grid-structured cloth: vertex (i, j) sits at row i, column j, stored row-major.
/// Edges are the 4-neighbourhood and each grid quad is split into two triangles;
/// both are implied by the grid dimensions and never change.
struct ClothMesh {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<Vec3> vertices;

  ClothMesh() = default;
  ClothMesh(int h, int w, std::vector<Vec3> v) : grid_h(h), grid_w(w), vertices(std::move(v)) { validate(); }

  int size() const { return grid_h * grid_w; }
  int index(int i, int j) const { return i * grid_w + j; }

  Vec3& at(int i, int j) { return vertices[static_cast<std::size_t>(index(i, j))]; }
  const Vec3& at(int i, int j) const { return vertices[static_cast<std::size_t>(index(i, j))]; }

  void validate() const {
    require(grid_h >= 2 && grid_w >= 2, ErrorKind::kInvalidArgument, "cloth grid must be at least 2x2");
    require(vertices.size() == static_cast<std::size_t>(grid_h) * grid_w, ErrorKind::kShape,
            "cloth vertex count does not match grid dimensions");
    for (const auto& v : vertices)
      require(v.allFinite(), ErrorKind::kNumeric, "cloth vertex has non-finite coordinates");
  }

  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> e;
    e.reserve(static_cast<std::size_t>(grid_h * (grid_w - 1) + grid_w * (grid_h - 1)));
    for (int i = 0; i < grid_h; ++i)
      for (int j = 0; j < grid_w; ++j) {
        if (j + 1 < grid_w) e.emplace_back(index(i, j), index(i, j + 1));
        if (i + 1 < grid_h) e.emplace_back(index(i, j), index(i + 1, j));
      }
    return e;
  }

  std::vector<std::array<int, 3>> faces() const {
    std::vector<std::array<int, 3>> f;
    f.reserve(static_cast<std::size_t>(2 * (grid_h - 1) * (grid_w - 1)));
    for (int i = 0; i + 1 < grid_h; ++i)
      for (int j = 0; j + 1 < grid_w; ++j) {
        const int a = index(i, j), b = index(i, j + 1), c = index(i + 1, j), d = index(i + 1, j + 1);
        f.push_back({a, b, d});
        f.push_back({a, d, c});
      }
    return f;
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& v : vertices) c += v;
    return c / static_cast<double>(vertices.size());
  }

  bool same_topology(const ClothMesh& o) const { return grid_h == o.grid_h && grid_w == o.grid_w; }
};

/// Planar uniform grid of side `side` centred at `center` on the plane z = center.z().
inline ClothMesh flat_grid(int grid_h, int grid_w, double side, const Vec3& center = Vec3::Zero()) {
  require(grid_h >= 2 && grid_w >= 2, ErrorKind::kInvalidArgument, "cloth grid must be at least 2x2");
  require(side > 0.0, ErrorKind::kInvalidArgument, "cloth side length must be positive");
  std::vector<Vec3> v;
  v.reserve(static_cast<std::size_t>(grid_h) * grid_w);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j)
      v.emplace_back(center.x() - side / 2 + side * j / (grid_w - 1), center.y() - side / 2 + side * i / (grid_h - 1),
                     center.z());
  return ClothMesh(grid_h, grid_w, std::move(v));
}

/// Every `stride`-th vertex along both axes; (grid - 1) must be divisible by stride.
inline ClothMesh subsample_grid(const ClothMesh& m, int stride) {
  require(stride >= 1 && (m.grid_h - 1) % stride == 0 && (m.grid_w - 1) % stride == 0, ErrorKind::kInvalidArgument,
          "grid cannot be subsampled with this stride");
  const int h = (m.grid_h - 1) / stride + 1, w = (m.grid_w - 1) / stride + 1;
  std::vector<Vec3> v;
  v.reserve(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) v.push_back(m.at(i * stride, j * stride));
  return ClothMesh(h, w, std::move(v));
}

}  // namespace clothdiff
