#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/registration/icp.hpp"
#include "clothdiff/registration/refine.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"
#include "clothdiff/sim/render.hpp"

namespace clothdiff::postprocess {

using registration::Points;

/// p -> A p + b on the plane. `order` names the chain, outermost first.
struct PlanarTransform {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  std::string order = "identity";

  static PlanarTransform scale_offset(const Eigen::Vector2d& scale, const Eigen::Vector2d& offset, std::string name) {
    require(scale.x() != 0.0 && scale.y() != 0.0 && scale.allFinite() && offset.allFinite(), ErrorKind::kDegenerate,
            "planar transform scale must be finite and non-zero");
    return {scale.asDiagonal(), offset, std::move(name)};
  }
  static PlanarTransform rigid(const registration::Rigid2& r, std::string name) { return {r.R, r.t, std::move(name)}; }

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return A * p + b; }
  Points apply(const Points& p) const { return (p * A.transpose()).rowwise() + b.transpose(); }

  PlanarTransform inverse() const {
    const Eigen::FullPivLU<Eigen::Matrix2d> lu(A);
    require(lu.isInvertible(), ErrorKind::kDegenerate, "planar transform is not invertible");
    const Eigen::Matrix2d inv = lu.inverse();
    return {inv, -(inv * b), "inv(" + order + ")"};
  }

  /// (*this) applied after `first`.
  PlanarTransform after(const PlanarTransform& first) const { return {A * first.A, A * first.b + b, order + " o " + first.order}; }
};

struct Renormalized {
  PlanarTransform transform;  // p -> (p - mean) / std per axis
  Points points;
};

inline Renormalized renormalize(const Points& p, const std::string& name = "renorm") {
  require(p.cols() == 2, ErrorKind::kShape, "renormalisation expects 2-D points");
  require(p.rows() >= 2 && p.allFinite(), ErrorKind::kDegenerate, "renormalisation needs at least two finite points");
  const Eigen::Vector2d mean = p.colwise().mean().transpose();
  const Eigen::Vector2d sd = ((p.rowwise() - mean.transpose()).array().square().colwise().sum() / double(p.rows())).sqrt().transpose();
  require(sd.x() > 0.0 && sd.y() > 0.0, ErrorKind::kDegenerate, "mask has zero spread along an axis");
  Renormalized r;
  r.transform = PlanarTransform::scale_offset(sd.cwiseInverse(), -mean.cwiseQuotient(sd), name);
  r.points = r.transform.apply(p);
  return r;
}

/// Pixel-centre coordinates (u = column + 0.5, v = row + 0.5) of the mask.
inline Points mask_points(const sim::DepthImage& img) {
  Points p(static_cast<Eigen::Index>(img.mask_count()), 2);
  Eigen::Index k = 0;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c)
      if (img.mask[img.pixel(r, c)]) p.row(k++) << c + 0.5, r + 0.5;
  return p;
}

/// Depth values under the mask, in mask_points order.
inline std::vector<double> masked_depths(const sim::DepthImage& img) {
  std::vector<double> d;
  d.reserve(img.mask_count());
  for (std::size_t k = 0; k < img.mask.size(); ++k)
    if (img.mask[k]) d.push_back(img.depth[k]);
  return d;
}

/// Observed cloth surface as world points, one per mask pixel.
inline Points depth_to_points(const sim::DepthImage& img, const sim::DepthCamera& cam) {
  require(img.rows == cam.rows && img.cols == cam.cols, ErrorKind::kShape, "depth image does not match the camera");
  Points p(static_cast<Eigen::Index>(img.mask_count()), 3);
  Eigen::Index k = 0;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const std::size_t i = img.pixel(r, c);
      if (!img.mask[i]) continue;
      const Vec2 xy = cam.to_world({c + 0.5, r + 0.5});
      p.row(k++) << xy.x(), xy.y(), cam.height - img.depth[i];
    }
  return p;
}

/// Points covering the x-y footprint of the mesh: the centres of the pixels it
/// covers on a grid with `resolution` pixels across its larger extent.
inline Points canonical_mask_points(const ClothMesh& mesh, int resolution = 96) {
  require(resolution >= 8, ErrorKind::kInvalidArgument, "canonical mask resolution must be at least 8");
  mesh.validate();
  Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v.head<2>());
    hi = hi.cwiseMax(v.head<2>());
  }
  const Vec2 ext = hi - lo, mid = (hi + lo) / 2;
  require(ext.maxCoeff() > 0.0, ErrorKind::kDegenerate, "mesh footprint is a single point");
  sim::DepthCamera cam;
  cam.meters_per_pixel = ext.maxCoeff() / resolution;
  cam.cols = cam.rows = resolution + 4;
  cam.height = 1.0;
  ClothMesh centred = mesh;
  for (auto& v : centred.vertices) v -= Vec3(mid.x(), mid.y(), 0.0);
  std::vector<double> height(static_cast<std::size_t>(cam.rows) * cam.cols, 0.0);
  std::vector<std::uint8_t> covered(height.size(), 0);
  sim::rasterize_max_height(centred, cam, height, covered);
  std::vector<Vec2> pts;
  for (int r = 0; r < cam.rows; ++r)
    for (int c = 0; c < cam.cols; ++c)
      if (covered[static_cast<std::size_t>(r) * cam.cols + c]) pts.push_back(cam.to_world({c + 0.5, r + 0.5}) + mid);
  require(pts.size() >= 3, ErrorKind::kDegenerate, "mesh footprint covers fewer than three mask pixels");
  Points p(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return p;
}

struct ImageFitConfig {
  int max_points = 1500;
  std::uint64_t seed = 0;
  registration::IcpConfig icp{50, 1e-12, false};
};

struct ImageFit {
  PlanarTransform canonical_renorm;  // T_c
  PlanarTransform observed_renorm;   // T_r
  PlanarTransform coarse;            // inv(T_r) o T_c
  PlanarTransform icp;               // fine alignment in image space
  PlanarTransform image;             // icp o coarse
  double coarse_residual = 0.0;      // mean squared mask distance before ICP
  double residual = 0.0;             // and after
};

/// Canonical x-y mask points to observed image-space mask points.
inline ImageFit fit_image_transform(const Points& canonical_xy, const Points& observed_xy, const ImageFitConfig& cfg = {}) {
  ImageFit f;
  f.canonical_renorm = renormalize(canonical_xy, "T_c").transform;
  f.observed_renorm = renormalize(observed_xy, "T_r").transform;
  f.coarse = f.observed_renorm.inverse().after(f.canonical_renorm);
  Rng rs(cfg.seed), rd(cfg.seed);
  const Points src = registration::downsample(f.coarse.apply(canonical_xy), cfg.max_points, rs);
  const Points dst = registration::downsample(observed_xy, cfg.max_points, rd);
  const registration::IcpResult r = registration::icp_2d(src, dst, cfg.icp);
  f.icp = PlanarTransform::rigid(r.transform, "T_icp");
  f.image = f.icp.after(f.coarse);
  f.coarse_residual = r.residuals.front();
  f.residual = r.residual;
  return f;
}

/// depth = a * height + b.
struct ZAffine {
  double a = -1.0;
  double b = 0.0;
  double apply(double z) const { return a * z + b; }
};

/// Sends the highest canonical vertex to the smallest observed depth and the
/// lowest to the largest; a flat cloth maps to the mean depth.
inline ZAffine fit_z_affine(const std::vector<double>& heights, const std::vector<double>& depths) {
  require(!heights.empty() && !depths.empty(), ErrorKind::kInvalidArgument, "height and depth sets must be non-empty");
  const auto [hmin, hmax] = std::minmax_element(heights.begin(), heights.end());
  const auto [dmin, dmax] = std::minmax_element(depths.begin(), depths.end());
  require(std::isfinite(*hmin) && std::isfinite(*hmax) && std::isfinite(*dmin) && std::isfinite(*dmax),
          ErrorKind::kNumeric, "non-finite heights or depths");
  if (*hmax == *hmin) {
    double mean = 0.0;
    for (double d : depths) mean += d;
    return {0.0, mean / static_cast<double>(depths.size())};
  }
  const double a = (*dmin - *dmax) / (*hmax - *hmin);
  return {a, *dmax - a * *hmin};
}

inline std::vector<double> heights(const ClothMesh& m) {
  std::vector<double> h;
  h.reserve(m.vertices.size());
  for (const auto& v : m.vertices) h.push_back(v.z());
  return h;
}

/// Image-space placement, then orthographic back-projection into the world.
inline ClothMesh canonical_to_world(const ClothMesh& mesh, const PlanarTransform& image, const ZAffine& z,
                                    const sim::DepthCamera& cam) {
  cam.validate();
  std::vector<Vec3> v(mesh.vertices.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const Vec2 xy = cam.to_world(image.apply(Eigen::Vector2d(p.x(), p.y())));
    v[i] = Vec3(xy.x(), xy.y(), cam.height - z.apply(p.z()));
  }
  return ClothMesh(mesh.grid_h, mesh.grid_w, std::move(v));
}

struct PlaceConfig {
  int canonical_resolution = 96;
  ImageFitConfig image;
};

struct Placement {
  ImageFit fit;
  ZAffine z;
  ClothMesh world;
};

/// The full chain for one observation: masks, image transform, depth affine,
/// back-projection.
inline Placement place_in_world(const ClothMesh& canonical, const sim::DepthImage& raw, const sim::DepthCamera& cam,
                                const PlaceConfig& cfg = {}) {
  require(raw.mask_count() >= 3, ErrorKind::kDegenerate, "observed mask has fewer than three pixels");
  Placement p;
  p.fit = fit_image_transform(canonical_mask_points(canonical, cfg.canonical_resolution), mask_points(raw), cfg.image);
  p.z = fit_z_affine(heights(canonical), masked_depths(raw));
  p.world = canonical_to_world(canonical, p.fit.image, p.z, cam);
  return p;
}

}  // namespace clothdiff::postprocess
