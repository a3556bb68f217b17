#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "clothdiff/data/generate.hpp"
#include "clothdiff/diffusion/denoiser.hpp"
#include "clothdiff/diffusion/train.hpp"
#include "clothdiff/registration/refine.hpp"

namespace clothdiff::cli {

using nlohmann::json;

/// Raised for anything the user can fix on the command line or in the config
/// file; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layered run configuration: defaults, then a JSON config file, then flags.
/// The resolved object is what gets written into checkpoints and reports.
struct RunConfig {
  json values;

  static json defaults() {
    const data::GenerateConfig g;
    const diffusion::TrainOptions t;
    const registration::RefineConfig r;
    const auto& rc = r.registration;
    return {
        {"jobs", 1},
        {"data",
         {{"seed", g.seed},
          {"episodes", g.episodes},
          {"actions", g.actions_per_episode},
          {"grid", g.grid},
          {"img", g.image_size},
          {"cloth_size", g.cloth_size},
          {"settle_steps", g.pick_place.max_settle_steps}}},
        {"model", {{"profile", "toy"}}},
        {"train",
         {{"epochs", 20},
          {"batch", t.batch_size},
          {"train_steps", 100},
          {"infer_steps", 10},
          {"lr", 1e-4},
          {"seed", 0},
          {"schedule", "squaredcos_cap_v2"},
          {"depth_noise", t.depth_noise}}},
        {"infer", {{"seed", 0}, {"refine", "none"}}},
        {"registration",
         {{"lambda", rc.lambda},
          {"beta", rc.beta},
          {"beta_scale", rc.beta_scale},
          {"outlier_weight", rc.outlier_weight},
          {"max_iterations", rc.max_iterations},
          {"tolerance", rc.tolerance},
          {"spr_weight", rc.spr_weight},
          {"spr_neighbors", rc.spr_neighbors},
          {"max_points", r.max_points}}},
    };
  }

  /// Every key in `layer` must exist in `base` with a compatible type.
  static void check_layer(const json& base, const json& layer, const std::string& where) {
    if (!layer.is_object()) throw UsageError("config " + (where.empty() ? std::string("root") : where) + " must be an object");
    for (const auto& [key, value] : layer.items()) {
      const std::string path = where.empty() ? key : where + "." + key;
      if (!base.contains(key)) throw UsageError("unknown config key '" + path + "'");
      const json& b = base.at(key);
      if (b.is_object()) {
        check_layer(b, value, path);
      } else if (b.is_number() != value.is_number() || b.is_string() != value.is_string() ||
                 b.is_boolean() != value.is_boolean()) {
        throw UsageError("config key '" + path + "' has the wrong type");
      }
    }
  }

  static RunConfig resolve(const std::filesystem::path& file, const json& overrides) {
    RunConfig c{defaults()};
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw UsageError("cannot read config file " + file.string());
      json layer;
      try {
        layer = json::parse(in);
      } catch (const json::parse_error& e) {
        throw UsageError("config file " + file.string() + " is not valid JSON: " + e.what());
      }
      check_layer(c.values, layer, "");
      c.values.merge_patch(layer);
    }
    check_layer(c.values, overrides, "");
    c.values.merge_patch(overrides);
    return c;
  }

  int jobs() const { return values.at("jobs").get<int>(); }

  data::GenerateConfig generate() const {
    const json& d = values.at("data");
    data::GenerateConfig g;
    g.seed = d.at("seed").get<std::uint64_t>();
    g.episodes = d.at("episodes").get<int>();
    g.actions_per_episode = d.at("actions").get<int>();
    g.grid = d.at("grid").get<int>();
    g.image_size = d.at("img").get<int>();
    g.cloth_size = d.at("cloth_size").get<double>();
    g.pick_place.max_settle_steps = d.at("settle_steps").get<int>();
    g.jobs = jobs();
    return g;
  }

  diffusion::DenoiserConfig denoiser(int image_size, int grid_h, int grid_w) const {
    const std::string p = values.at("model").at("profile").get<std::string>();
    if (p == "toy") return diffusion::DenoiserConfig::toy(image_size, grid_h, grid_w);
    if (p == "full") {
      diffusion::DenoiserConfig c;
      c.image_size = image_size;
      c.grid_h = grid_h;
      c.grid_w = grid_w;
      return c;
    }
    throw UsageError("model.profile must be 'toy' or 'full', got '" + p + "'");
  }

  diffusion::TrainOptions train_options() const {
    const json& t = values.at("train");
    diffusion::TrainOptions o;
    o.batch_size = t.at("batch").get<int>();
    o.depth_noise = t.at("depth_noise").get<double>();
    o.adam.learning_rate = t.at("lr").get<double>();
    return o;
  }

  registration::RefineConfig refinement(std::uint64_t seed) const {
    const json& r = values.at("registration");
    registration::RefineConfig c;
    auto& rc = c.registration;
    rc.lambda = r.at("lambda").get<double>();
    rc.beta = r.at("beta").get<double>();
    rc.beta_scale = r.at("beta_scale").get<double>();
    rc.outlier_weight = r.at("outlier_weight").get<double>();
    rc.max_iterations = r.at("max_iterations").get<int>();
    rc.tolerance = r.at("tolerance").get<double>();
    rc.spr_weight = r.at("spr_weight").get<double>();
    rc.spr_neighbors = r.at("spr_neighbors").get<int>();
    c.max_points = r.at("max_points").get<int>();
    c.seed = seed;
    return c;
  }
};

}  // namespace clothdiff::cli
