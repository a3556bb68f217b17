#pragma once

#include <vector>

#include <Eigen/Core>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/kdtree.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::metrics {

namespace detail {

inline double mean_nearest_sq(const Eigen::MatrixXd& from, const KdTree& to) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) s += to.nearest(from.row(i)).sq_dist;
  return s / static_cast<double>(from.rows());
}

}  // namespace detail

/// Symmetric Chamfer distance with squared nearest-neighbour distances, each
/// direction averaged over its own set. Point sets are stored one per row.
inline double chamfer(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() > 0 && b.rows() > 0, ErrorKind::kInvalidArgument, "Chamfer distance needs two non-empty sets");
  require(a.cols() == b.cols(), ErrorKind::kShape, "Chamfer point sets differ in dimension");
  const KdTree ta(a), tb(b);
  return detail::mean_nearest_sq(a, tb) + detail::mean_nearest_sq(b, ta);
}

inline Eigen::MatrixXd mesh_points(const ClothMesh& m) {
  Eigen::MatrixXd p(m.size(), 3);
  for (int i = 0; i < m.size(); ++i) p.row(i) = m.vertices[static_cast<std::size_t>(i)].transpose();
  return p;
}

inline double chamfer(const ClothMesh& a, const ClothMesh& b) { return chamfer(mesh_points(a), mesh_points(b)); }

}  // namespace clothdiff::metrics
