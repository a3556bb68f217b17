#pragma once

// Observation to world-frame mesh: preprocess, sample a translation map, decode
// it in canonical space, place it with the image and depth fits, and optionally
// refine against the observed depth cloud.

#include <chrono>
#include <optional>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/dataset.hpp"
#include "clothdiff/data/preprocess.hpp"
#include "clothdiff/diffusion/sample.hpp"
#include "clothdiff/diffusion/space.hpp"
#include "clothdiff/diffusion/train.hpp"
#include "clothdiff/postprocess/postprocess.hpp"
#include "clothdiff/registration/refine.hpp"

namespace clothdiff::pipeline {

inline std::vector<diffusion::TrainingPair> training_pairs(const data::Dataset& d, int image_size) {
  std::vector<diffusion::TrainingPair> pairs;
  pairs.reserve(d.samples.size());
  for (const auto& s : d.samples)
    pairs.push_back({data::preprocess_depth(s.raw, image_size), diffusion::DiffusionSpace::encode(s.tmap)});
  return pairs;
}

struct EstimateConfig {
  int infer_steps = 10;
  bool refine = false;
  registration::RefineConfig refinement;
  postprocess::PlaceConfig place;
  diffusion::SamplerOptions sampler;
};

struct Estimate {
  data::TranslationMap map;
  ClothMesh canonical;
  ClothMesh placed;                 // world frame, before refinement
  std::optional<ClothMesh> refined;
  double seconds = 0.0;             // wall clock of the whole call
  double refine_seconds = 0.0;

  const ClothMesh& final_mesh() const { return refined ? *refined : placed; }
};

inline ClothMesh refine_against_depth(const ClothMesh& placed, const sim::DepthImage& raw, const sim::DepthCamera& cam,
                                      const registration::RefineConfig& cfg) {
  return registration::refine_mesh(placed, postprocess::depth_to_points(raw, cam), cfg);
}

inline Estimate estimate(const diffusion::DenoiserNet& net, const diffusion::NoiseSchedule& training_schedule,
                         const data::CanonicalFlatMesh& canonical, const sim::DepthImage& raw,
                         const sim::DepthCamera& cam, Rng& rng, const EstimateConfig& cfg = {}) {
  using Clock = std::chrono::steady_clock;
  require(net.config.grid_h == canonical.mesh.grid_h && net.config.grid_w == canonical.mesh.grid_w, ErrorKind::kShape,
          "network grid does not match the canonical mesh");
  const auto t0 = Clock::now();
  const data::DepthObservation obs = data::preprocess_depth(raw, net.config.image_size);
  Estimate e{diffusion::sample(net, obs, training_schedule, cfg.infer_steps, rng, cfg.sampler), canonical.mesh,
             canonical.mesh, std::nullopt, 0.0, 0.0};
  e.canonical = data::decode_translation_map(e.map, canonical);
  e.placed = postprocess::place_in_world(e.canonical, raw, cam, cfg.place).world;
  if (cfg.refine) {
    const auto r0 = Clock::now();
    e.refined = refine_against_depth(e.placed, raw, cam, cfg.refinement);
    e.refine_seconds = std::chrono::duration<double>(Clock::now() - r0).count();
  }
  e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return e;
}

/// The untrained reference: the flat canonical sheet placed by the same
/// image and depth fits.
inline ClothMesh placed_flat_baseline(const data::CanonicalFlatMesh& canonical, const sim::DepthImage& raw,
                                      const sim::DepthCamera& cam, const postprocess::PlaceConfig& cfg = {}) {
  return postprocess::place_in_world(canonical.mesh, raw, cam, cfg).world;
}

}  // namespace clothdiff::pipeline
