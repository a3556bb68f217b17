#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "clothdiff/core/error.hpp"

namespace clothdiff {

/// Static kd-tree over the rows of an N x D point matrix (median splits on the
/// widest axis). Queries are exact.
class KdTree {
 public:
  struct Hit {
    int index = -1;
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  KdTree() = default;

  explicit KdTree(const Eigen::MatrixXd& points) : pts_(points) {
    require(pts_.rows() > 0, ErrorKind::kInvalidArgument, "kd-tree needs at least one point");
    require(pts_.allFinite(), ErrorKind::kNumeric, "kd-tree points must be finite");
    order_.resize(static_cast<std::size_t>(pts_.rows()));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * order_.size() / kLeaf + 2);
    build(0, static_cast<int>(order_.size()));
  }

  int size() const { return static_cast<int>(pts_.rows()); }
  int dim() const { return static_cast<int>(pts_.cols()); }
  const Eigen::MatrixXd& points() const { return pts_; }

  template <typename Vec>
  Hit nearest(const Vec& q) const {
    Hit best;
    search_nearest(0, q, best);
    return best;
  }

  /// The k nearest points, closest first.
  template <typename Vec>
  std::vector<Hit> knn(const Vec& q, int k) const {
    require(k >= 1 && k <= size(), ErrorKind::kInvalidArgument, "k must lie in [1, number of points]");
    std::priority_queue<std::pair<double, int>> heap;  // max-heap on distance
    search_knn(0, q, k, heap);
    std::vector<Hit> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = {heap.top().second, heap.top().first};
      heap.pop();
    }
    return out;
  }

 private:
  static constexpr int kLeaf = 8;

  struct Node {
    int begin = 0, end = 0;  // range into order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeaf) return id;
    int axis = 0;
    double widest = -1.0;
    for (int a = 0; a < pts_.cols(); ++a) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i = begin; i < end; ++i) {
        lo = std::min(lo, pts_(order_[static_cast<std::size_t>(i)], a));
        hi = std::max(hi, pts_(order_[static_cast<std::size_t>(i)], a));
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = a;
      }
    }
    if (widest <= 0.0) return id;  // all points coincide
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
      return pts_(a, axis) < pts_(b, axis) || (pts_(a, axis) == pts_(b, axis) && a < b);
    });
    const double split = pts_(order_[static_cast<std::size_t>(mid)], axis);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  template <typename Vec>
  double sq_dist(int i, const Vec& q) const {
    double d = 0.0;
    for (int a = 0; a < pts_.cols(); ++a) {
      const double t = pts_(i, a) - q[a];
      d += t * t;
    }
    return d;
  }

  template <typename Vec>
  void search_nearest(int id, const Vec& q, Hit& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int p = order_[static_cast<std::size_t>(i)];
        const double d = sq_dist(p, q);
        if (d < best.sq_dist || (d == best.sq_dist && p < best.index)) best = {p, d};
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0 ? n.left : n.right, far = diff < 0 ? n.right : n.left;
    search_nearest(near, q, best);
    if (diff * diff <= best.sq_dist) search_nearest(far, q, best);
  }

  template <typename Vec>
  void search_knn(int id, const Vec& q, int k, std::priority_queue<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int p = order_[static_cast<std::size_t>(i)];
        const std::pair<double, int> cand{sq_dist(p, q), p};
        if (static_cast<int>(heap.size()) < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0 ? n.left : n.right, far = diff < 0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || diff * diff <= heap.top().first) search_knn(far, q, k, heap);
  }

  Eigen::MatrixXd pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace clothdiff
