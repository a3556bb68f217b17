#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/preprocess.hpp"
#include "clothdiff/data/translation_map.hpp"
#include "clothdiff/diffusion/denoiser.hpp"
#include "clothdiff/diffusion/schedule.hpp"
#include "clothdiff/diffusion/space.hpp"

namespace clothdiff::diffusion {

struct SamplerOptions {
  /// Clamp the implied clean estimate (x - sqrt(1 - ᾱ) eps) / sqrt(ᾱ) to
  /// [-clip, clip] and re-derive eps from it before each update.
  bool clip_x0 = true;
  double clip = 1.0;
};

/// Reverse process from x_T ~ N(0, I) over the schedule's retained steps:
/// x <- α (x - γ eps(x, t)) + σ z, with no noise on the final step.
/// eps_fn(const std::vector<T>& x, int t) returns a vector of the same size.
template <typename T, typename EpsFn>
std::vector<T> reverse_process(EpsFn&& eps_fn, std::size_t size, const NoiseSchedule& s, Rng& rng,
                               const SamplerOptions& opt = {}) {
  require(s.steps() >= 1, ErrorKind::kInvalidArgument, "schedule has no retained steps");
  std::vector<T> x(size);
  for (auto& v : x) v = static_cast<T>(rng.normal());
  for (int k = s.steps() - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    const int t = s.timesteps[kk];
    const std::vector<T> eps = eps_fn(static_cast<const std::vector<T>&>(x), t);
    require(eps.size() == size, ErrorKind::kShape, "noise predictor returned the wrong size");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double ra = std::sqrt(ab), rb = std::sqrt(1.0 - ab);
    const double a = s.step_alpha[kk], g = s.step_gamma[kk], sig = s.step_sigma[kk];
    for (std::size_t i = 0; i < size; ++i) {
      const double xi = static_cast<double>(x[i]);
      double e = static_cast<double>(eps[i]);
      if (opt.clip_x0) {
        const double x0 = std::clamp((xi - rb * e) / ra, -opt.clip, opt.clip);
        e = (xi - ra * x0) / rb;
      }
      double v = a * (xi - g * e);
      if (k > 0) v += sig * rng.normal();
      x[i] = static_cast<T>(v);
    }
  }
  return x;
}

/// Working-range maps ([3, H, W] each) for a batch of observations.
inline std::vector<std::vector<float>> sample_batch(const DenoiserNet& net,
                                                    const std::vector<const data::DepthObservation*>& obs,
                                                    const NoiseSchedule& sched, Rng& rng,
                                                    const SamplerOptions& opt = {}) {
  const DenoiserConfig& c = net.config;
  require(!obs.empty(), ErrorKind::kInvalidArgument, "no observations to sample for");
  std::vector<const std::vector<float>*> images;
  for (const auto* o : obs) {
    require(o->size == c.image_size, ErrorKind::kShape, "observation size does not match the network");
    images.push_back(&o->normalized);
  }
  const nn::Tensor<float> codes = encode_observations(net, observation_batch(images, c.image_size));
  const int n = static_cast<int>(obs.size());
  const std::size_t m = static_cast<std::size_t>(3) * c.grid_h * c.grid_w;
  auto eps_fn = [&](const std::vector<float>& x, int t) {
    const nn::Tensor<float> xt(nn::Shape{n, 3, c.grid_h, c.grid_w}, x);
    return predict_noise(net, xt, t, codes).to_vector();
  };
  const std::vector<float> flat = reverse_process<float>(eps_fn, static_cast<std::size_t>(n) * m, sched, rng, opt);
  std::vector<std::vector<float>> out(obs.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * m), flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
  return out;
}

inline std::vector<float> sample_working(const DenoiserNet& net, const data::DepthObservation& obs,
                                         const NoiseSchedule& sched, Rng& rng, const SamplerOptions& opt = {}) {
  return std::move(sample_batch(net, {&obs}, sched, rng, opt)[0]);
}

/// Strides the training schedule to n_steps and returns the quantised map.
inline data::TranslationMap sample(const DenoiserNet& net, const data::DepthObservation& obs,
                                   const NoiseSchedule& training, int n_steps, Rng& rng,
                                   const SamplerOptions& opt = {}) {
  const NoiseSchedule s = stride_schedule(training, n_steps);
  return DiffusionSpace::decode(sample_working(net, obs, s, rng, opt), net.config.grid_h, net.config.grid_w);
}

}  // namespace clothdiff::diffusion
