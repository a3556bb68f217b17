#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/kdtree.hpp"
#include "clothdiff/registration/nonrigid.hpp"

namespace clothdiff::registration {

struct Rigid2 {
  Eigen::Matrix2d R = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  static Rigid2 from_angle(double theta, const Eigen::Vector2d& t = Eigen::Vector2d::Zero()) {
    Rigid2 r;
    r.R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    r.t = t;
    return r;
  }

  double angle() const { return std::atan2(R(1, 0), R(0, 0)); }
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return R * p + t; }
  Points apply(const Points& p) const { return (p * R.transpose()).rowwise() + t.transpose(); }
  Rigid2 inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  /// (*this) after o.
  Rigid2 compose(const Rigid2& o) const { return {R * o.R, R * o.t + t}; }
};

struct IcpConfig {
  int max_iterations = 50;
  double tolerance = 1e-12;  // on the change of the mean squared residual
  bool multi_start = true;   // also try principal-axis initialisations
};

struct IcpResult {
  Rigid2 transform;
  double residual = 0.0;          // mean squared nearest-neighbour distance
  std::vector<double> residuals;  // per iteration, before each update, then the final value
  int iterations = 0;
};

/// Least-squares rotation and translation taking rows of a onto rows of b.
inline Rigid2 fit_rigid2(const Points& a, const Points& b) {
  const Eigen::Vector2d ma = a.colwise().mean().transpose(), mb = b.colwise().mean().transpose();
  const Eigen::Matrix2d cov = (a.rowwise() - ma.transpose()).transpose() * (b.rowwise() - mb.transpose());
  const Eigen::JacobiSVD<Eigen::Matrix2d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix2d d = Eigen::Matrix2d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(1, 1) = -1;
  Rigid2 r;
  r.R = svd.matrixV() * d * svd.matrixU().transpose();
  r.t = mb - r.R * ma;
  return r;
}

namespace detail {

inline void check_planar(const Points& p, const char* what) {
  require(p.cols() == 2, ErrorKind::kShape, std::string(what) + " must be 2-D");
  require(p.rows() >= 3, ErrorKind::kDegenerate, std::string(what) + " needs at least three points");
  require(p.allFinite(), ErrorKind::kNumeric, std::string(what) + " has non-finite coordinates");
  const Eigen::MatrixXd c = p.rowwise() - p.colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c.transpose() * c);
  require(es.eigenvalues()[1] > 0.0 && es.eigenvalues()[0] > 1e-12 * es.eigenvalues()[1], ErrorKind::kDegenerate,
          std::string(what) + " is collinear");
}

inline double principal_angle(const Points& p) {
  const Eigen::MatrixXd c = p.rowwise() - p.colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c.transpose() * c);
  const Eigen::Vector2d v = es.eigenvectors().col(1);
  return std::atan2(v.y(), v.x());
}

inline IcpResult icp_run(const Points& src, const KdTree& tree, const Rigid2& init, const IcpConfig& cfg) {
  const Points& dst = tree.points();
  IcpResult r;
  r.transform = init;
  Points matched(src.rows(), 2);
  auto match = [&](const Rigid2& tf) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < src.rows(); ++i) {
      const Eigen::Vector2d q = tf.apply(Eigen::Vector2d(src.row(i).transpose()));
      const KdTree::Hit h = tree.nearest(q);
      matched.row(i) = dst.row(h.index);
      s += h.sq_dist;
    }
    return s / static_cast<double>(src.rows());
  };
  double res = match(r.transform);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    r.residuals.push_back(res);
    r.transform = fit_rigid2(src, matched);
    r.iterations = it + 1;
    const double next = match(r.transform);
    const bool done = std::abs(res - next) < cfg.tolerance;
    res = next;
    if (done) break;
  }
  r.residuals.push_back(res);
  r.residual = res;
  return r;
}

}  // namespace detail

/// Rigid alignment of src onto dst by iterated closest points. The first start
/// is `init`; with multi_start two principal-axis starts with matched centroids
/// are also run and the lowest residual wins (earlier starts win ties).
inline IcpResult icp_2d(const Points& src, const Points& dst, const IcpConfig& cfg = {}, const Rigid2& init = {}) {
  detail::check_planar(src, "ICP source");
  detail::check_planar(dst, "ICP target");
  require(cfg.max_iterations >= 1 && cfg.tolerance > 0.0, ErrorKind::kInvalidArgument, "invalid ICP settings");
  const KdTree tree(dst);
  IcpResult best = detail::icp_run(src, tree, init, cfg);
  if (cfg.multi_start) {
    const Eigen::Vector2d ms = src.colwise().mean().transpose(), md = dst.colwise().mean().transpose();
    const double base = detail::principal_angle(dst) - detail::principal_angle(src);
    for (const double theta : {base, base + std::numbers::pi}) {
      Rigid2 start = Rigid2::from_angle(theta);
      start.t = md - start.R * ms;
      IcpResult r = detail::icp_run(src, tree, start, cfg);
      if (r.residual < best.residual - 1e-12 * (1.0 + best.residual)) best = std::move(r);
    }
  }
  return best;
}

}  // namespace clothdiff::registration
