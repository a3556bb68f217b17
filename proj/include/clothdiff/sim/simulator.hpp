#pragma once

// Mass-spring cloth with structural, shear and bending springs, ground contact
// and a single kinematic grasp. Self-collision is not modelled.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::sim {

struct SimParams {
  double total_mass = 0.1;         // kg, spread evenly over the vertices
  double stiffness_per_mass = 1.5e5;  // structural spring constant divided by vertex mass (1/s^2)
  double shear_ratio = 0.5;
  double bend_ratio = 0.25;
  double damping = 0.02;  // fraction of velocity removed per exposed step
  double gravity = 9.81;
  double ground = 0.0;
  bool ground_contact = true;
  double friction = 0.3;  // fraction of tangential velocity removed per contact substep
  int substeps = 3;
  double step_dt = 3e-3;  // exposed step; substeps of step_dt / substeps
};

struct Spring {
  int a = 0;
  int b = 0;
  double rest = 0.0;
  double k = 0.0;
};

struct SimState {
  ClothMesh mesh;
  std::vector<Vec3> velocities;
  std::optional<int> pinned;
  SimParams params;
  std::vector<Spring> springs;

  double vertex_mass() const { return params.total_mass / mesh.size(); }
};

inline std::vector<Spring> build_springs(const ClothMesh& rest, const SimParams& p) {
  const double k = p.stiffness_per_mass * p.total_mass / rest.size();
  std::vector<Spring> s;
  auto link = [&](int i0, int j0, int i1, int j1, double kk) {
    if (i1 < 0 || j1 < 0 || i1 >= rest.grid_h || j1 >= rest.grid_w) return;
    const int a = rest.index(i0, j0), b = rest.index(i1, j1);
    s.push_back({a, b, (rest.vertices[static_cast<std::size_t>(a)] - rest.vertices[static_cast<std::size_t>(b)]).norm(),
                 kk});
  };
  for (int i = 0; i < rest.grid_h; ++i)
    for (int j = 0; j < rest.grid_w; ++j) {
      link(i, j, i, j + 1, k);
      link(i, j, i + 1, j, k);
      link(i, j, i + 1, j + 1, k * p.shear_ratio);
      link(i, j, i + 1, j - 1, k * p.shear_ratio);
      link(i, j, i, j + 2, k * p.bend_ratio);
      link(i, j, i + 2, j, k * p.bend_ratio);
    }
  return s;
}

/// Flat cloth resting on the ground plane; also the canonical flattened state.
inline SimState init_flat(int grid_h, int grid_w, double side_length, const Vec2& center = Vec2::Zero(),
                          const SimParams& params = {}) {
  SimState s;
  s.params = params;
  s.mesh = flat_grid(grid_h, grid_w, side_length, Vec3(center.x(), center.y(), params.ground));
  s.velocities.assign(static_cast<std::size_t>(s.mesh.size()), Vec3::Zero());
  s.springs = build_springs(s.mesh, params);
  return s;
}

/// Advances the state by dt with params.substeps semi-implicit Euler substeps.
inline void step_in_place(SimState& s, double dt) {
  require(dt > 0.0 && dt <= 5e-3, ErrorKind::kInvalidArgument, "simulation step must lie in (0, 5e-3] s");
  const SimParams& p = s.params;
  const int n = s.mesh.size();
  const double m = s.vertex_mass();
  const double h = dt / p.substeps;
  std::vector<Vec3> force(static_cast<std::size_t>(n));
  auto& x = s.mesh.vertices;
  auto& v = s.velocities;
  const int pin = s.pinned.value_or(-1);

  for (int sub = 0; sub < p.substeps; ++sub) {
    std::fill(force.begin(), force.end(), Vec3(0.0, 0.0, -p.gravity * m));
    for (const Spring& sp : s.springs) {
      const Vec3 d = x[static_cast<std::size_t>(sp.b)] - x[static_cast<std::size_t>(sp.a)];
      const double len = d.norm();
      if (len <= 0.0) continue;
      const Vec3 f = (sp.k * (len - sp.rest) / len) * d;
      force[static_cast<std::size_t>(sp.a)] += f;
      force[static_cast<std::size_t>(sp.b)] -= f;
    }
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (i != pin) v[k] += force[k] * (h / m);
      x[k] += v[k] * h;
      if (p.ground_contact && i != pin && x[k].z() < p.ground) {
        x[k].z() = p.ground;
        if (v[k].z() < 0.0) v[k].z() = 0.0;
        v[k].x() *= 1.0 - p.friction;
        v[k].y() *= 1.0 - p.friction;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    if (i != pin) v[static_cast<std::size_t>(i)] *= 1.0 - p.damping;
  for (int i = 0; i < n; ++i)
    require(x[static_cast<std::size_t>(i)].allFinite() && v[static_cast<std::size_t>(i)].allFinite(),
            ErrorKind::kNumeric, "simulation produced non-finite state; parameters are unstable");
}

inline SimState step(SimState s, double dt) {
  step_in_place(s, dt);
  return s;
}

inline double max_speed(const SimState& s) {
  double best = 0.0;
  for (std::size_t i = 0; i < s.velocities.size(); ++i)
    if (!s.pinned || static_cast<int>(i) != *s.pinned) best = std::max(best, s.velocities[i].norm());
  return best;
}

struct PickPlaceAction {
  Vec2 pick = Vec2::Zero();
  Vec2 place = Vec2::Zero();
  double lift_height = 0.0;
};

struct PickPlaceConfig {
  double grasp_radius = 0.1;      // m, in the x-y plane
  double gripper_speed = 0.6;     // m/s along the trajectory
  double workspace_half = 0.8;    // place points must have |x|, |y| <= this
  double settle_speed = 0.01;     // m/s
  int min_settle_steps = 30;
  int max_settle_steps = 1500;
};

/// Grasps the vertex nearest the pick point, lifts it, carries it to the place
/// point, releases and lets the cloth settle.
inline SimState apply_pick_and_place(SimState s, const PickPlaceAction& a, const PickPlaceConfig& cfg = {}) {
  require(std::abs(a.place.x()) <= cfg.workspace_half && std::abs(a.place.y()) <= cfg.workspace_half,
          ErrorKind::kInvalidArgument, "place point lies outside the workspace");
  require(a.lift_height >= 0.0, ErrorKind::kInvalidArgument, "lift height must be non-negative");

  int grasp = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < s.mesh.size(); ++i) {
    const double d = (s.mesh.vertices[static_cast<std::size_t>(i)].head<2>() - a.pick).norm();
    if (d < best) {
      best = d;
      grasp = i;
    }
  }
  require(best <= cfg.grasp_radius, ErrorKind::kInvalidArgument, "no cloth vertex within grasp radius of pick point");

  const double dt = s.params.step_dt;
  const auto g = static_cast<std::size_t>(grasp);
  s.pinned = grasp;

  auto drive_to = [&](const Vec3& target) {
    const Vec3 start = s.mesh.vertices[g];
    const double dist = (target - start).norm();
    const int steps = static_cast<int>(std::ceil(dist / (cfg.gripper_speed * dt)));
    for (int k = 1; k <= steps; ++k) {
      const Vec3 want = start + (target - start) * (static_cast<double>(k) / steps);
      s.velocities[g] = (want - s.mesh.vertices[g]) / dt;
      step_in_place(s, dt);
      s.mesh.vertices[g] = want;
    }
    s.velocities[g].setZero();
  };

  const Vec3 p0 = s.mesh.vertices[g];
  drive_to(Vec3(p0.x(), p0.y(), s.params.ground + a.lift_height));
  drive_to(Vec3(a.place.x(), a.place.y(), s.params.ground + a.lift_height));
  s.pinned.reset();

  for (int k = 0; k < cfg.max_settle_steps; ++k) {
    step_in_place(s, dt);
    if (k + 1 >= cfg.min_settle_steps && max_speed(s) < cfg.settle_speed) break;
  }
  return s;
}

}  // namespace clothdiff::sim
