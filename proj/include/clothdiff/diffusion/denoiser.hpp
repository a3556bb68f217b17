#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/nn/graph.hpp"

namespace clothdiff::diffusion {

using nlohmann::json;

struct DenoiserConfig {
  int image_size = 96;
  int grid_h = 25;
  int grid_w = 25;
  std::vector<int> encoder_widths{16, 32, 64, 128};
  int obs_code = 256;
  int time_embed = 64;
  int time_code = 256;
  std::vector<int> unet_widths{32, 64, 128};

  /// Small profile used by the overfit and timing checks.
  static DenoiserConfig toy(int image_size, int grid_h, int grid_w) {
    DenoiserConfig c;
    c.image_size = image_size;
    c.grid_h = grid_h;
    c.grid_w = grid_w;
    c.encoder_widths = {8, 16, 16, 32};
    c.obs_code = 64;
    c.time_embed = 32;
    c.time_code = 64;
    c.unet_widths = {16, 32, 32};
    return c;
  }

  void validate() const {
    require(image_size >= 16, ErrorKind::kInvalidArgument, "observation images must be at least 16x16");
    require(grid_h >= 2 && grid_w >= 2, ErrorKind::kInvalidArgument, "translation map grid must be at least 2x2");
    require(!encoder_widths.empty() && unet_widths.size() >= 2, ErrorKind::kInvalidArgument,
            "encoder needs a stage and the U-net at least two levels");
    require(time_embed >= 2 && time_embed % 2 == 0, ErrorKind::kInvalidArgument, "time embedding must be even");
    for (int w : encoder_widths) require(w > 0, ErrorKind::kInvalidArgument, "encoder width must be positive");
    for (int w : unet_widths) require(w > 0, ErrorKind::kInvalidArgument, "U-net width must be positive");
    require(obs_code > 0 && time_code > 0, ErrorKind::kInvalidArgument, "code sizes must be positive");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

inline json to_json(const DenoiserConfig& c) {
  return {{"image_size", c.image_size},   {"grid", {c.grid_h, c.grid_w}},   {"encoder_widths", c.encoder_widths},
          {"obs_code", c.obs_code},       {"time_embed", c.time_embed},     {"time_code", c.time_code},
          {"unet_widths", c.unet_widths}};
}

inline DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.grid_h = j.at("grid").at(0).get<int>();
  c.grid_w = j.at("grid").at(1).get<int>();
  c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  c.obs_code = j.at("obs_code").get<int>();
  c.time_embed = j.at("time_embed").get<int>();
  c.time_code = j.at("time_code").get<int>();
  c.unet_widths = j.at("unet_widths").get<std::vector<int>>();
  c.validate();
  return c;
}

/// Observation encoder (depth image -> code) and noise predictor
/// (x_t, time embedding, observation code -> eps). Parameters are ordered
/// encoder first, then denoiser, each in graph declaration order.
struct DenoiserNet {
  DenoiserConfig config;
  nn::Graph encoder;
  nn::Graph denoiser;
  nn::ParamSet<float> encoder_params;
  nn::ParamSet<float> denoiser_params;

  std::size_t parameter_count() const { return encoder.parameter_count() + denoiser.parameter_count(); }
};

namespace detail {

inline int encoder_block(nn::Graph& g, const std::string& name, int x, int out) {
  int h = g.conv2d(name + ".conv1", x, out, 3, 2, 1);
  h = g.mish(name + ".act1", g.group_norm(name + ".norm1", h));
  h = g.conv2d(name + ".conv2", h, out, 3, 1, 1);
  h = g.mish(name + ".act2", g.group_norm(name + ".norm2", h));
  const int skip = g.conv2d(name + ".skip", x, out, 1, 2, 0);
  return g.add(name + ".out", h, skip);
}

inline int film_block(nn::Graph& g, const std::string& name, int x, int out, int cond) {
  const int in = g.node(x).shape[0];
  int h = g.conv2d(name + ".conv1", x, out, 3, 1, 1);
  h = g.mish(name + ".act1", g.group_norm(name + ".norm1", h));
  h = g.film(name + ".film", h, g.linear(name + ".cond", cond, 2 * out));
  h = g.conv2d(name + ".conv2", h, out, 3, 1, 1);
  h = g.mish(name + ".act2", g.group_norm(name + ".norm2", h));
  const int skip = in == out ? x : g.conv2d(name + ".skip", x, out, 1, 1, 0);
  return g.add(name + ".out", h, skip);
}

}  // namespace detail

inline nn::Graph build_encoder(const DenoiserConfig& c) {
  nn::Graph g;
  int x = g.input("obs", {1, c.image_size, c.image_size});
  x = g.conv2d("enc.stem", x, c.encoder_widths[0], 3, 2, 1);
  x = g.mish("enc.stem.act", g.group_norm("enc.stem.norm", x));
  for (std::size_t i = 0; i < c.encoder_widths.size(); ++i)
    x = detail::encoder_block(g, "enc.stage" + std::to_string(i), x, c.encoder_widths[i]);
  x = g.mean_pool("enc.pool", x);
  x = g.linear("enc.code", x, c.obs_code);
  g.mark_output(x);
  return g;
}

inline nn::Graph build_denoiser(const DenoiserConfig& c) {
  nn::Graph g;
  const auto& w = c.unet_widths;
  const int levels = static_cast<int>(w.size());
  int x = g.input("x_t", {3, c.grid_h, c.grid_w});
  const int temb = g.input("time_embedding", {c.time_embed});
  const int obs = g.input("obs_code", {c.obs_code});

  int t = g.linear("time.fc1", temb, c.time_code);
  t = g.linear("time.fc2", g.mish("time.act", t), c.time_code);
  const int cond = g.mish("cond.act", g.concat("cond", obs, t));

  x = g.conv2d("unet.in", x, w[0], 3, 1, 1);
  std::vector<int> skips;
  for (int l = 0; l < levels; ++l) {
    const std::string name = "unet.down" + std::to_string(l);
    if (l > 0) x = g.conv2d(name + ".sample", x, w[static_cast<std::size_t>(l)], 3, 2, 1);
    x = detail::film_block(g, name + ".block", x, w[static_cast<std::size_t>(l)], cond);
    skips.push_back(x);
  }
  x = detail::film_block(g, "unet.mid", x, w.back(), cond);
  for (int l = levels - 2; l >= 0; --l) {
    const std::string name = "unet.up" + std::to_string(l);
    const int skip = skips[static_cast<std::size_t>(l)];
    const int target_h = g.node(skip).shape[1], target_w = g.node(skip).shape[2];
    const int h = g.node(x).shape[1], wd = g.node(x).shape[2];
    require(target_h - (2 * h - 1) == target_w - (2 * wd - 1), ErrorKind::kShape,
            "U-net upsampling needs matching output padding on both axes");
    x = g.conv_transpose2d(name + ".sample", x, w[static_cast<std::size_t>(l)], 3, 2, 1, target_h - (2 * h - 1));
    x = g.concat(name + ".skip", x, skip);
    x = detail::film_block(g, name + ".block", x, w[static_cast<std::size_t>(l)], cond);
  }
  x = g.mish("out.act", g.group_norm("out.norm", x));
  x = g.conv2d("out.conv", x, 3, 3, 1, 1);
  g.mark_output(x);
  return g;
}

/// The output convolution starts at zero, so an untrained net predicts eps = 0.
inline DenoiserNet make_denoiser(const DenoiserConfig& c, std::uint64_t seed) {
  c.validate();
  DenoiserNet net;
  net.config = c;
  net.encoder = build_encoder(c);
  net.denoiser = build_denoiser(c);
  net.encoder_params = nn::init_params<float>(net.encoder, derive_seed(seed, 0));
  net.denoiser_params = nn::init_params<float>(net.denoiser, derive_seed(seed, 1));
  for (std::size_t i = 0; i < net.denoiser.params().size(); ++i)
    if (net.denoiser.params()[i].name.rfind("out.conv.", 0) == 0) net.denoiser_params[i].fill(0.f);
  return net;
}

/// Sinusoidal embedding of an integer timestep: [sin(t f_i), cos(t f_i)], f_i = 10000^(-i / half).
inline void time_embedding(int t, int dim, float* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * i / half);
    out[i] = static_cast<float>(std::sin(t * f));
    out[half + i] = static_cast<float>(std::cos(t * f));
  }
}

/// Scales preprocessed gray levels in [0, 255] to the encoder's [0, 1] input.
inline nn::Tensor<float> observation_batch(const std::vector<const std::vector<float>*>& images, int size) {
  const std::size_t px = static_cast<std::size_t>(size) * size;
  nn::Tensor<float> t({static_cast<int>(images.size()), 1, size, size});
  for (std::size_t n = 0; n < images.size(); ++n) {
    require(images[n]->size() == px, ErrorKind::kShape, "observation image has the wrong size");
    for (std::size_t k = 0; k < px; ++k) t[n * px + k] = (*images[n])[k] / 255.0f;
  }
  return t;
}

inline nn::Tensor<float> encode_observations(const DenoiserNet& net, const nn::Tensor<float>& obs) {
  return std::move(nn::evaluate(net.encoder, net.encoder_params, std::span<const nn::Tensor<float>>(&obs, 1))[0]);
}

/// Noise prediction for a batch sharing one timestep.
inline nn::Tensor<float> predict_noise(const DenoiserNet& net, const nn::Tensor<float>& x_t, int t,
                                       const nn::Tensor<float>& codes) {
  const int n = x_t.dim(0);
  const int d = net.config.time_embed;
  nn::Tensor<float> temb({n, d});
  for (int i = 0; i < n; ++i) time_embedding(t, d, temb.data() + static_cast<std::size_t>(i) * d);
  const std::vector<nn::Tensor<float>> in{x_t, temb, codes};
  return std::move(nn::evaluate(net.denoiser, net.denoiser_params, std::span<const nn::Tensor<float>>(in))[0]);
}

}  // namespace clothdiff::diffusion
