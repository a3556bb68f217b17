#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/preprocess.hpp"
#include "clothdiff/diffusion/denoiser.hpp"
#include "clothdiff/diffusion/schedule.hpp"
#include "clothdiff/nn/adam.hpp"

namespace clothdiff::diffusion {

struct TrainingPair {
  data::DepthObservation obs;
  std::vector<float> map;  // working range, [3, H, W]
};

struct TrainOptions {
  int batch_size = 64;
  double depth_noise = 2.0;  // gray levels, uniform
  nn::AdamConfig adam;
};

struct TrainState {
  nn::AdamState encoder;
  nn::AdamState denoiser;
  std::int64_t epoch = 0;

  static TrainState for_net(const DenoiserNet& net, const nn::AdamConfig& adam) {
    return {nn::AdamState::for_params(net.encoder_params, adam), nn::AdamState::for_params(net.denoiser_params, adam), 0};
  }
};

/// One Adam step on the listed pairs; returns the batch MSE.
inline double train_step(DenoiserNet& net, TrainState& state, const std::vector<TrainingPair>& pairs,
                         std::span<const std::size_t> batch, const NoiseSchedule& sched, Rng& rng,
                         const TrainOptions& opt) {
  const DenoiserConfig& c = net.config;
  const int n = static_cast<int>(batch.size());
  require(n > 0, ErrorKind::kInvalidArgument, "empty training batch");
  const std::size_t px = static_cast<std::size_t>(c.image_size) * c.image_size;
  const std::size_t m = static_cast<std::size_t>(3) * c.grid_h * c.grid_w;

  nn::Tensor<float> obs({n, 1, c.image_size, c.image_size});
  nn::Tensor<float> x_t({n, 3, c.grid_h, c.grid_w});
  nn::Tensor<float> temb({n, c.time_embed});
  std::vector<float> eps(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const TrainingPair& p = pairs.at(batch[idx]);
    require(p.obs.normalized.size() == px && p.map.size() == m, ErrorKind::kShape,
            "training pair does not match the network configuration");
    const int t = rng.uniform_int(1, sched.T);
    time_embedding(t, c.time_embed, temb.data() + idx * static_cast<std::size_t>(c.time_embed));
    float* e = eps.data() + idx * m;
    for (std::size_t k = 0; k < m; ++k) e[k] = static_cast<float>(rng.normal());
    add_noise<float, float>(p.map, std::span<const float>(e, m), t, sched, std::span<float>(x_t.data() + idx * m, m));
    data::DepthObservation noisy = p.obs;
    if (opt.depth_noise > 0.0) data::perturb_depth(noisy, opt.depth_noise, rng);
    for (std::size_t k = 0; k < px; ++k) obs[idx * px + k] = noisy.normalized[k] / 255.0f;
  }

  const nn::Forward<float> fe = nn::forward(net.encoder, net.encoder_params, std::span<const nn::Tensor<float>>(&obs, 1));
  const int code_node = net.encoder.outputs()[0];
  const std::vector<nn::Tensor<float>> din{x_t, temb, fe.values[static_cast<std::size_t>(code_node)]};
  const nn::Forward<float> fd = nn::forward(net.denoiser, net.denoiser_params, std::span<const nn::Tensor<float>>(din));
  const int out_node = net.denoiser.outputs()[0];
  const nn::Tensor<float>& pred = fd.values[static_cast<std::size_t>(out_node)];

  double loss = 0.0;
  nn::Tensor<float> seed(pred.shape());
  const double count = static_cast<double>(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = static_cast<double>(pred[k]) - eps[k];
    loss += d * d;
    seed[k] = static_cast<float>(2.0 * d / count);
  }
  loss /= count;
  require(std::isfinite(loss), ErrorKind::kNumeric, "training loss is not finite (diverged)");

  const std::pair<int, nn::Tensor<float>> dseed{out_node, std::move(seed)};
  nn::Gradients<float> gd = nn::backward(net.denoiser, net.denoiser_params, fd, std::span(&dseed, 1));
  const std::pair<int, nn::Tensor<float>> eseed{code_node, std::move(gd.inputs[2])};
  nn::Gradients<float> ge = nn::backward(net.encoder, net.encoder_params, fe, std::span(&eseed, 1));
  nn::adam_update(net.denoiser_params, gd.params, state.denoiser);
  nn::adam_update(net.encoder_params, ge.params, state.encoder);
  return loss;
}

/// One pass over a shuffled copy of the data; returns per-batch losses.
inline std::vector<double> train_epoch(DenoiserNet& net, TrainState& state, const std::vector<TrainingPair>& pairs,
                                       const NoiseSchedule& sched, Rng& rng, const TrainOptions& opt) {
  require(!pairs.empty(), ErrorKind::kInvalidArgument, "training set is empty");
  require(opt.batch_size >= 1, ErrorKind::kInvalidArgument, "batch size must be positive");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i-- > 1;)
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
  std::vector<double> losses;
  const auto b = static_cast<std::size_t>(opt.batch_size);
  for (std::size_t s = 0; s < order.size(); s += b) {
    const std::size_t e = std::min(order.size(), s + b);
    losses.push_back(train_step(net, state, pairs, std::span<const std::size_t>(order.data() + s, e - s), sched, rng, opt));
  }
  ++state.epoch;
  return losses;
}

}  // namespace clothdiff::diffusion
