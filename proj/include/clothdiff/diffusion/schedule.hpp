#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "clothdiff/core/error.hpp"

namespace clothdiff::diffusion {

enum class ScheduleKind { kSquaredCosine, kLinear };

inline const char* schedule_kind_name(ScheduleKind k) {
  return k == ScheduleKind::kSquaredCosine ? "squaredcos_cap_v2" : "linear";
}

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "squaredcos_cap_v2" || s == "cosine" || s == "squared_cosine") return ScheduleKind::kSquaredCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  fail(ErrorKind::kInvalidArgument, "unknown noise schedule '" + s + "' (expected squaredcos_cap_v2 or linear)");
}

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

/// Training schedule plus the reverse-process coefficients for a retained
/// subsequence of its timesteps.
///
/// Index k of the step_* arrays refers to timesteps[k]; its predecessor is
/// timesteps[k - 1], or t = 0 for k = 0. With prev = ᾱ at the predecessor:
///   step_beta  = 1 - ᾱ_t / prev
///   step_alpha = 1 / sqrt(1 - step_beta)
///   step_gamma = step_beta / sqrt(1 - ᾱ_t)
///   step_sigma = sqrt(step_beta * (1 - prev) / (1 - ᾱ_t))
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::kSquaredCosine;
  std::vector<double> beta;       // beta[t], t = 0..T, beta[0] = 0
  std::vector<double> alpha_bar;  // alpha_bar[t], t = 0..T, alpha_bar[0] = 1
  std::vector<int> timesteps;     // ascending, ends at T
  std::vector<double> step_beta;
  std::vector<double> step_alpha;
  std::vector<double> step_gamma;
  std::vector<double> step_sigma;

  int steps() const { return static_cast<int>(timesteps.size()); }
  bool operator==(const NoiseSchedule&) const = default;
};

namespace detail {

inline double cosine_f(double t, int T) {
  const double c = std::cos((t / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
  return c * c;
}

inline void derive_steps(NoiseSchedule& s, std::vector<int> retained) {
  s.timesteps = std::move(retained);
  const std::size_t n = s.timesteps.size();
  s.step_beta.resize(n);
  s.step_alpha.resize(n);
  s.step_gamma.resize(n);
  s.step_sigma.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ab = s.alpha_bar[static_cast<std::size_t>(s.timesteps[k])];
    const double prev = k == 0 ? s.alpha_bar[0] : s.alpha_bar[static_cast<std::size_t>(s.timesteps[k - 1])];
    const double b = 1.0 - ab / prev;
    s.step_beta[k] = b;
    s.step_alpha[k] = 1.0 / std::sqrt(1.0 - b);
    s.step_gamma[k] = b / std::sqrt(1.0 - ab);
    s.step_sigma[k] = std::sqrt(b * (1.0 - prev) / (1.0 - ab));
  }
}

}  // namespace detail

inline NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::kSquaredCosine) {
  require(T >= 2, ErrorKind::kInvalidArgument, "noise schedule needs T >= 2, got " + std::to_string(T));
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    double b = 0.0;
    if (kind == ScheduleKind::kSquaredCosine) {
      b = 1.0 - detail::cosine_f(t, T) / detail::cosine_f(t - 1, T);
    } else {
      const double scale = 1000.0 / T;
      b = scale * (1e-4 + (0.02 - 1e-4) * (t - 1) / (T - 1));
    }
    b = std::min(b, kMaxBeta);
    s.beta[static_cast<std::size_t>(t)] = b;
    s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - b);
  }
  std::vector<int> all(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) all[static_cast<std::size_t>(t) - 1] = t;
  detail::derive_steps(s, std::move(all));
  return s;
}

/// Keeps timesteps floor(k T / n), k = 1..n, and re-derives the step coefficients.
inline NoiseSchedule stride_schedule(const NoiseSchedule& parent, int n_steps) {
  require(n_steps >= 1 && n_steps <= parent.T, ErrorKind::kInvalidArgument,
          "strided schedule needs 1 <= steps <= " + std::to_string(parent.T) + ", got " + std::to_string(n_steps));
  NoiseSchedule s = parent;
  std::vector<int> kept(static_cast<std::size_t>(n_steps));
  for (int k = 1; k <= n_steps; ++k)
    kept[static_cast<std::size_t>(k) - 1] =
        static_cast<int>(static_cast<long long>(k) * parent.T / n_steps);
  detail::derive_steps(s, std::move(kept));
  return s;
}

/// x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps, elementwise.
template <typename Out, typename In>
void add_noise(std::span<const In> x0, std::span<const In> eps, int t, const NoiseSchedule& s, std::span<Out> out) {
  require(t >= 0 && t <= s.T, ErrorKind::kInvalidArgument,
          "timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + "]");
  require(x0.size() == eps.size() && out.size() == x0.size(), ErrorKind::kShape, "add_noise: size mismatch");
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<Out>(a * x0[i] + b * eps[i]);
}

template <typename T>
std::vector<T> add_noise(const std::vector<T>& x0, const std::vector<T>& eps, int t, const NoiseSchedule& s) {
  std::vector<T> out(x0.size());
  add_noise<T, T>(std::span<const T>(x0), std::span<const T>(eps), t, s, std::span<T>(out));
  return out;
}

}  // namespace clothdiff::diffusion
