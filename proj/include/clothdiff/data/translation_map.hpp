#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::data {

inline constexpr double kMapClip = 3.0;
inline constexpr double kMapStep = 2 * kMapClip / 255.0;  // one quantisation level in normalised units

/// Normalised displacement in [-3, 3] to an 8-bit level, rounding half away from zero.
inline std::uint8_t quantize(double v) {
  const double c = std::clamp(v, -kMapClip, kMapClip);
  const double q = std::round((c + kMapClip) / (2 * kMapClip) * 255.0);  // std::round rounds halves away from zero
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline double dequantize(std::uint8_t q) { return q / 255.0 * (2 * kMapClip) - kMapClip; }

/// The flattened reference mesh: planar, centred at the origin, spanning width w
/// along x and length l along y.
struct CanonicalFlatMesh {
  ClothMesh mesh;
  double width = 1.0;
  double length = 1.0;

  static CanonicalFlatMesh flat(int grid_h, int grid_w, double side) {
    return {flat_grid(grid_h, grid_w, side), side, side};
  }

  double z_scale() const { return 0.4 * width; }
  Vec3 to_normalized(const Vec3& p) const { return {p.x() / (width / 2), p.y() / (length / 2), p.z() / z_scale()}; }
  Vec3 from_normalized(const Vec3& n) const { return {n.x() * (width / 2), n.y() * (length / 2), n.z() * z_scale()}; }
};

/// Per-vertex displacement field stored as 8-bit RGB, one pixel per grid vertex.
struct TranslationMap {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::uint8_t> levels;  // grid_h * grid_w * 3, row-major, xyz interleaved

  TranslationMap() = default;
  TranslationMap(int h, int w, std::uint8_t fill = 128)
      : grid_h(h), grid_w(w), levels(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::size_t size() const { return levels.size(); }
  double normalized(std::size_t k) const { return dequantize(levels[k]); }
  std::vector<double> normalized() const {
    std::vector<double> v(levels.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = dequantize(levels[k]);
    return v;
  }
  bool operator==(const TranslationMap&) const = default;
};

/// τ = im(mesh, x-y centred) − im(canonical) in normalised units, clipped and quantised.
inline TranslationMap encode_translation_map(const ClothMesh& mesh, const CanonicalFlatMesh& canonical) {
  require(mesh.same_topology(canonical.mesh), ErrorKind::kShape, "mesh and canonical grids differ in size");
  const Vec3 c = mesh.centroid();
  const Vec3 shift(c.x(), c.y(), 0.0);
  TranslationMap t(mesh.grid_h, mesh.grid_w);
  for (int i = 0; i < mesh.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Vec3 d = canonical.to_normalized(mesh.vertices[k] - shift) - canonical.to_normalized(canonical.mesh.vertices[k]);
    for (int a = 0; a < 3; ++a) t.levels[3 * k + static_cast<std::size_t>(a)] = quantize(d[a]);
  }
  return t;
}

/// Builds the canonical-space mesh from any per-vertex normalised displacement
/// (quantised levels or continuous model output); no re-centring is applied.
inline ClothMesh decode_normalized(const std::vector<double>& tau, int grid_h, int grid_w,
                                   const CanonicalFlatMesh& canonical) {
  require(grid_h == canonical.mesh.grid_h && grid_w == canonical.mesh.grid_w, ErrorKind::kShape,
          "translation map and canonical grids differ in size");
  require(tau.size() == static_cast<std::size_t>(grid_h) * grid_w * 3, ErrorKind::kShape,
          "translation map has the wrong number of values");
  std::vector<Vec3> v(static_cast<std::size_t>(grid_h) * grid_w);
  for (std::size_t k = 0; k < v.size(); ++k) {
    const Vec3 n = canonical.to_normalized(canonical.mesh.vertices[k]) + Vec3(tau[3 * k], tau[3 * k + 1], tau[3 * k + 2]);
    v[k] = canonical.from_normalized(n);
  }
  return ClothMesh(grid_h, grid_w, std::move(v));
}

inline ClothMesh decode_translation_map(const TranslationMap& t, const CanonicalFlatMesh& canonical) {
  return decode_normalized(t.normalized(), t.grid_h, t.grid_w, canonical);
}

}  // namespace clothdiff::data
