#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/registration/nonrigid.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::registration {

struct RefineConfig {
  RegistrationConfig registration;
  int max_points = 2000;
  std::uint64_t seed = 0;
};

inline Points to_points(const std::vector<Vec3>& v) {
  Points p(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return p;
}

/// At most `limit` rows chosen uniformly without replacement, kept in input order.
inline Points downsample(const Points& p, int limit, Rng& rng) {
  require(limit >= 1, ErrorKind::kInvalidArgument, "downsampling limit must be positive");
  if (p.rows() <= limit) return p;
  std::vector<int> idx(static_cast<std::size_t>(p.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < limit; ++i)
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(i, static_cast<int>(p.rows()) - 1))]);
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  Points out(limit, p.cols());
  for (int i = 0; i < limit; ++i) out.row(i) = p.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

/// Moves the predicted mesh onto the observed cloud with structure-preserving
/// registration; the grid (and so the edge set) is unchanged.
inline ClothMesh refine_mesh(const ClothMesh& pred, const Points& observed, const RefineConfig& cfg = {}) {
  pred.validate();
  require(observed.rows() >= 1 && observed.cols() == 3, ErrorKind::kInvalidArgument,
          "observed cloud must be a non-empty N x 3 point set");
  Rng rng(cfg.seed);
  const Points x = downsample(observed, cfg.max_points, rng);
  const RegResult r = spr_nonrigid(x, to_points(pred.vertices), cfg.registration);
  std::vector<Vec3> v(pred.vertices.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = r.aligned.row(static_cast<Eigen::Index>(i)).transpose();
  return ClothMesh(pred.grid_h, pred.grid_w, std::move(v));
}

}  // namespace clothdiff::registration
