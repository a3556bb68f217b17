#pragma once

#include <cmath>
#include <cstdint>

#include "clothdiff/core/error.hpp"
#include "clothdiff/nn/graph.hpp"

namespace clothdiff::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  ParamSet<float> first_moment;
  ParamSet<float> second_moment;

  static AdamState for_params(const ParamSet<float>& params, AdamConfig cfg = {}) {
    AdamState s;
    s.config = cfg;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.shape());
      s.second_moment.emplace_back(p.shape());
    }
    return s;
  }
};

/// One bias-corrected Adam step, in place. Throws on non-finite gradients.
inline void adam_update(ParamSet<float>& params, const ParamSet<float>& grads, AdamState& state) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size(), ErrorKind::kShape,
          "adam: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].shape() == grads[i].shape() && params[i].shape() == state.first_moment[i].shape(),
            ErrorKind::kShape, "adam: shape mismatch at parameter " + std::to_string(i));
    require(grads[i].all_finite(), ErrorKind::kNumeric,
            "adam: non-finite gradient at parameter " + std::to_string(i) + " (training diverged)");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(c.beta1), b2 = static_cast<float>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].data();
    const float* g = grads[i].data();
    float* m = state.first_moment[i].data();
    float* v = state.second_moment[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= static_cast<float>(c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  }
}

}  // namespace clothdiff::nn
