#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/parallel.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/dataset.hpp"
#include "clothdiff/sim/render.hpp"
#include "clothdiff/sim/simulator.hpp"

namespace clothdiff::data {

struct GenerateConfig {
  std::uint64_t seed = 0;
  int episodes = 200;
  int actions_per_episode = 10;
  int grid = 25;            // recorded vertices per axis
  int min_sim_grid = 15;     // the simulation runs on a refinement of the recorded grid with at least this many
  double cloth_size = 1.0;
  int image_size = 96;
  sim::DepthCamera camera;
  sim::SimParams sim;
  sim::PickPlaceConfig pick_place;
  int warmup_min = 1;
  int warmup_max = 3;
  double max_drag = 0.6;    // m, per axis
  double lift_min = 0.05;   // m
  double lift_max = 0.3;    // m
  double view_margin = 0.05;  // m kept clear at the image border
  int jobs = 1;
};

/// Random pick at a cloth vertex; place offset uniformly within +-max_drag per
/// axis and clamped into the workspace.
inline sim::PickPlaceAction random_action(const sim::SimState& s, const GenerateConfig& cfg, Rng& rng) {
  const int v = rng.uniform_int(0, s.mesh.size() - 1);
  const Vec2 pick = s.mesh.vertices[static_cast<std::size_t>(v)].head<2>();
  const double lim = cfg.pick_place.workspace_half;
  Vec2 place(pick.x() + rng.uniform(-cfg.max_drag, cfg.max_drag), pick.y() + rng.uniform(-cfg.max_drag, cfg.max_drag));
  place = place.cwiseMax(Vec2(-lim, -lim)).cwiseMin(Vec2(lim, lim));
  return {pick, place, rng.uniform(cfg.lift_min, cfg.lift_max)};
}

/// Slides the cloth back over the camera centre if any vertex strays into the border margin.
inline void keep_in_view(sim::SimState& s, const sim::DepthCamera& cam, double margin) {
  const double hx = cam.half_extent_x() - margin, hy = cam.half_extent_y() - margin;
  bool outside = false;
  for (const auto& v : s.mesh.vertices) outside = outside || std::abs(v.x()) > hx || std::abs(v.y()) > hy;
  if (!outside) return;
  const Vec3 c = s.mesh.centroid();
  for (auto& v : s.mesh.vertices) v -= Vec3(c.x(), c.y(), 0.0);
}

/// Refinement factor r: the simulated grid has r * (grid - 1) + 1 vertices per axis.
inline int sim_refinement(const GenerateConfig& cfg) {
  require(cfg.grid >= 2, ErrorKind::kInvalidArgument, "cloth grid must be at least 2x2");
  return std::max(1, (cfg.min_sim_grid - 1 + cfg.grid - 2) / (cfg.grid - 1));
}

/// Renders the simulated surface; the stored mesh is the recorded sub-grid.
inline Sample record_sample(const sim::SimState& s, int stride, const sim::DepthCamera& cam,
                            const CanonicalFlatMesh& canonical) {
  Sample out;
  out.mesh = round_to_float(subsample_grid(s.mesh, stride));
  out.raw = sim::render_depth(round_to_float(s.mesh), cam, s.params.ground);
  for (double& d : out.raw.depth) d = quantize_depth(d);
  require(out.raw.mask_count() > 0, ErrorKind::kDegenerate, "recorded cloth state has an empty mask");
  out.tmap = encode_translation_map(out.mesh, canonical);
  return out;
}

inline std::vector<Sample> generate_episode(const GenerateConfig& cfg, const CanonicalFlatMesh& canonical, int episode) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(episode)));
  const int r = sim_refinement(cfg);
  const int g = r * (cfg.grid - 1) + 1;
  sim::SimState s = sim::init_flat(g, g, cfg.cloth_size, Vec2::Zero(), cfg.sim);
  const int warmup = rng.uniform_int(cfg.warmup_min, cfg.warmup_max);
  std::vector<Sample> out;
  for (int a = 0; a < warmup + cfg.actions_per_episode; ++a) {
    s = sim::apply_pick_and_place(s, random_action(s, cfg, rng), cfg.pick_place);
    keep_in_view(s, cfg.camera, cfg.view_margin);
    if (a >= warmup) out.push_back(record_sample(s, r, cfg.camera, canonical));
  }
  return out;
}

inline Dataset generate_dataset(const GenerateConfig& cfg) {
  require(cfg.episodes >= 1, ErrorKind::kInvalidArgument, "need at least one episode");
  require(cfg.actions_per_episode >= 1, ErrorKind::kInvalidArgument, "need at least one recorded action per episode");
  require(cfg.warmup_min >= 0 && cfg.warmup_max >= cfg.warmup_min, ErrorKind::kInvalidArgument,
          "invalid warm-up action range");
  cfg.camera.validate();
  Dataset d;
  d.info = {cfg.grid, cfg.grid, cfg.cloth_size, cfg.camera, cfg.image_size, cfg.seed, cfg.episodes, cfg.actions_per_episode};
  d.canonical = CanonicalFlatMesh::flat(cfg.grid, cfg.grid, cfg.cloth_size);
  d.canonical.mesh = round_to_float(d.canonical.mesh);  // as stored in canonical.f32
  std::vector<std::vector<Sample>> per(static_cast<std::size_t>(cfg.episodes));
  parallel_for(per.size(), cfg.jobs, [&](std::size_t e) { per[e] = generate_episode(cfg, d.canonical, static_cast<int>(e)); });
  for (auto& ep : per)
    for (auto& s : ep) d.samples.push_back(std::move(s));
  return d;
}

}  // namespace clothdiff::data
