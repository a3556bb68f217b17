#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/kdtree.hpp"

namespace clothdiff::registration {

/// Points are stored one per row.
using Points = Eigen::MatrixXd;

struct RegistrationConfig {
  double lambda = 2.0;
  double beta = 0.0;           // kernel width; <= 0 means beta_scale * template diameter
  double beta_scale = 0.3;
  double outlier_weight = 0.05;
  int max_iterations = 100;
  double tolerance = 1e-6;     // on the relative objective change
  double sigma2_floor = 1e-8;
  double spr_weight = 1.0;
  int spr_neighbors = 8;
  double lle_regularization = 1e-3;

  void validate() const {
    require(lambda > 0.0, ErrorKind::kInvalidArgument, "lambda must be positive");
    require(beta > 0.0 || beta_scale > 0.0, ErrorKind::kInvalidArgument, "kernel width must be positive");
    require(outlier_weight >= 0.0 && outlier_weight < 1.0, ErrorKind::kInvalidArgument,
            "outlier weight must lie in [0, 1)");
    require(max_iterations >= 1, ErrorKind::kInvalidArgument, "at least one EM iteration is required");
    require(tolerance > 0.0 && sigma2_floor > 0.0, ErrorKind::kInvalidArgument, "tolerances must be positive");
    require(spr_weight >= 0.0 && spr_neighbors >= 1 && lle_regularization > 0.0, ErrorKind::kInvalidArgument,
            "invalid local-structure settings");
  }
};

struct RegResult {
  Points W;        // M x D kernel coefficients, v(y_m) = sum_j G(y_m, y_j) W_j
  Points aligned;  // Y + G W
  double sigma2 = 0.0;
  double beta = 0.0;
  std::vector<double> objective;  // at the initial state, then after every iteration
  int iterations = 0;
  bool converged = false;
};

/// Largest pairwise distance between rows.
inline double diameter(const Points& p) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = i + 1; j < p.rows(); ++j) best = std::max(best, (p.row(i) - p.row(j)).squaredNorm());
  return std::sqrt(best);
}

inline Eigen::MatrixXd gaussian_kernel(const Points& y, double beta) {
  const Eigen::Index m = y.rows();
  Eigen::MatrixXd g(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < m; ++j) g(i, j) = g(j, i) = std::exp(-(y.row(i) - y.row(j)).squaredNorm() / (2 * beta * beta));
  }
  return g;
}

/// Row-stochastic reconstruction weights: each point as an affine combination
/// of its k nearest neighbours (locally linear embedding).
inline Eigen::MatrixXd lle_weights(const Points& y, int k, double reg) {
  const Eigen::Index m = y.rows();
  require(k < m, ErrorKind::kInvalidArgument, "neighbourhood size must be smaller than the template");
  const KdTree tree(y);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd q = y.row(i).transpose();
    std::vector<int> nb;
    for (const auto& h : tree.knn(q, k + 1))
      if (h.index != i && static_cast<int>(nb.size()) < k) nb.push_back(h.index);
    Eigen::MatrixXd z(k, y.cols());
    for (int a = 0; a < k; ++a) z.row(a) = y.row(nb[static_cast<std::size_t>(a)]) - y.row(i);
    Eigen::MatrixXd c = z * z.transpose();
    const double tr = c.trace();
    c.diagonal().array() += tr > 0.0 ? reg * tr : reg;
    Eigen::VectorXd w = c.partialPivLu().solve(Eigen::VectorXd::Ones(k));
    w /= w.sum();
    for (int a = 0; a < k; ++a) l(i, nb[static_cast<std::size_t>(a)]) = w[a];
  }
  return l;
}

namespace detail {

inline void check_inputs(const Points& x, const Points& y) {
  require(x.rows() >= 1, ErrorKind::kInvalidArgument, "reference set is empty");
  require(y.rows() >= 2, ErrorKind::kInvalidArgument, "template needs at least two points");
  require(x.cols() == y.cols() && x.cols() >= 1, ErrorKind::kShape, "reference and template dimensions differ");
  require(x.allFinite() && y.allFinite(), ErrorKind::kNumeric, "registration input has non-finite coordinates");
}

struct EStep {
  Eigen::MatrixXd p;  // M x N posteriors
  double nll = 0.0;
};

inline EStep expectation(const Points& x, const Points& t, double sigma2, double w) {
  const Eigen::Index n = x.rows(), m = t.rows();
  const double d = static_cast<double>(x.cols());
  const double log_norm = 0.5 * d * std::log(2 * std::numbers::pi * sigma2);
  const double log_c = w > 0.0 ? log_norm + std::log(w) - std::log1p(-w) + std::log(double(m)) - std::log(double(n))
                               : -std::numeric_limits<double>::infinity();
  EStep e;
  e.p.resize(m, n);
  e.nll = 0.0;
  const double base = std::log1p(-w) - std::log(double(m)) - log_norm;
  for (Eigen::Index j = 0; j < n; ++j) {
    double top = log_c;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double a = -(x.row(j) - t.row(i)).squaredNorm() / (2 * sigma2);
      e.p(i, j) = a;
      top = std::max(top, a);
    }
    double s = std::exp(log_c - top);
    for (Eigen::Index i = 0; i < m; ++i) s += std::exp(e.p(i, j) - top);
    const double lse = top + std::log(s);
    for (Eigen::Index i = 0; i < m; ++i) e.p(i, j) = std::exp(e.p(i, j) - lse);
    e.nll -= base + lse;
  }
  return e;
}

/// EM for the penalised mixture fit. The objective is the mixture negative
/// log-likelihood plus lambda/2 tr(W^T G W) plus alpha/(2 sigma^2) |(I - L) G W|^2,
/// where `h` = (I - L)^T (I - L) is empty for plain coherent drift. Sharing the
/// sigma^2 scale with the data term keeps the structure weight comparable to
/// the posterior mass in the M-step system.
inline RegResult nonrigid_em(const Points& x, const Points& y, const RegistrationConfig& cfg, const Eigen::MatrixXd& h,
                             double alpha) {
  cfg.validate();
  check_inputs(x, y);
  const Eigen::Index n = x.rows(), m = y.rows();
  const double dim = static_cast<double>(x.cols());
  const double diam = diameter(y);
  require(cfg.beta > 0.0 || diam > 0.0, ErrorKind::kDegenerate,
          "all template points coincide; jitter the template or set an explicit kernel width");
  const double beta = cfg.beta > 0.0 ? cfg.beta : cfg.beta_scale * diam;
  const Eigen::MatrixXd g = gaussian_kernel(y, beta);
  const bool spr = alpha > 0.0 && h.size() > 0;
  const Eigen::MatrixXd hg = spr ? Eigen::MatrixXd(h * g) : Eigen::MatrixXd();

  double sigma2 = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i) sigma2 += (x.row(j) - y.row(i)).squaredNorm();
  sigma2 = std::max(sigma2 / (dim * double(n) * double(m)), cfg.sigma2_floor);

  RegResult r;
  r.beta = beta;
  r.W = Points::Zero(m, x.cols());
  Points t = y;
  auto structure = [&](const Points& w) {
    if (!spr) return 0.0;
    const Eigen::MatrixXd gw = g * w;
    return (gw.transpose() * h * gw).trace();
  };

  EStep e = expectation(x, t, sigma2, cfg.outlier_weight);
  r.objective.push_back(e.nll);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Eigen::VectorXd p1 = e.p.rowwise().sum();
    const double np = p1.sum();
    require(np > 0.0 && std::isfinite(np), ErrorKind::kNumeric, "posterior mass vanished; lower the outlier weight");
    const Eigen::MatrixXd px = e.p * x;

    Eigen::MatrixXd a = p1.asDiagonal() * g;
    a.diagonal().array() += cfg.lambda * sigma2;
    if (spr) a += alpha * hg;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const double rc = lu.rcond();
    require(rc > 1e-14 && std::isfinite(rc), ErrorKind::kDegenerate,
            "registration system is singular (degenerate template); increase lambda or jitter the template");
    r.W = lu.solve(px - p1.asDiagonal() * y);
    require(r.W.allFinite(), ErrorKind::kNumeric, "registration solve produced non-finite coefficients");
    t = y + g * r.W;

    double num = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < m; ++i) num += e.p(i, j) * (x.row(j) - t.row(i)).squaredNorm();
    const double rs = structure(r.W);
    sigma2 = std::max((num + alpha * rs) / (np * dim), cfg.sigma2_floor);

    e = expectation(x, t, sigma2, cfg.outlier_weight);
    const double obj = e.nll + 0.5 * cfg.lambda * (r.W.transpose() * (t - y)).trace() + 0.5 * alpha * rs / sigma2;
    require(std::isfinite(obj), ErrorKind::kNumeric, "registration objective is not finite");
    const double prev = r.objective.back();
    r.objective.push_back(obj);
    r.iterations = it + 1;
    if (std::abs(prev - obj) <= cfg.tolerance * std::max(1.0, std::abs(obj))) {
      r.converged = true;
      break;
    }
  }
  r.aligned = t;
  r.sigma2 = sigma2;
  return r;
}

}  // namespace detail

/// Coherent point drift: template Y drifts onto reference X.
inline RegResult cpd_nonrigid(const Points& x, const Points& y, const RegistrationConfig& cfg = {}) {
  return detail::nonrigid_em(x, y, cfg, Eigen::MatrixXd(), 0.0);
}

/// Coherent drift with an extra penalty on changes to each template point's
/// reconstruction from its neighbours.
inline RegResult spr_nonrigid(const Points& x, const Points& y, const RegistrationConfig& cfg = {}) {
  cfg.validate();
  detail::check_inputs(x, y);
  require(cfg.spr_neighbors < y.rows(), ErrorKind::kInvalidArgument, "neighbourhood size must be below template size");
  const Eigen::MatrixXd l = lle_weights(y, cfg.spr_neighbors, cfg.lle_regularization);
  const Eigen::MatrixXd il = Eigen::MatrixXd::Identity(y.rows(), y.rows()) - l;
  return detail::nonrigid_em(x, y, cfg, il.transpose() * il, cfg.spr_weight);
}

}  // namespace clothdiff::registration
