#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <unistd.h>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <vector>

#include "clothdiff/core/rng.hpp"
#include "clothdiff/diffusion/checkpoint.hpp"
#include "clothdiff/diffusion/denoiser.hpp"
#include "clothdiff/diffusion/sample.hpp"
#include "clothdiff/diffusion/schedule.hpp"
#include "clothdiff/diffusion/space.hpp"
#include "clothdiff/diffusion/train.hpp"
#include "clothdiff/metrics/ssim.hpp"

namespace clothdiff::diffusion {
namespace {

// Independent transcription of the squared-cosine schedule.
double oracle_cosine_beta(int t, int T) {
  auto f = [T](double u) {
    const double c = std::cos((u / T + 0.008) / 1.008 * std::numbers::pi / 2.0);
    return c * c;
  };
  return std::min(1.0 - f(t) / f(t - 1), 0.999);
}

double oracle_linear_beta(int t, int T) {
  const double lo = 1000.0 / T * 1e-4, hi = 1000.0 / T * 0.02;
  return std::min(lo + (hi - lo) * (t - 1) / (T - 1), 0.999);
}

double closed_form_mean_coefficient(const NoiseSchedule& s, int t) {
  const std::vector<double> x0{1.0}, eps{0.0};
  return add_noise(x0, eps, t, s)[0];
}

double closed_form_std(const NoiseSchedule& s, int t) {
  const std::vector<double> x0{0.0}, eps{1.0};
  return add_noise(x0, eps, t, s)[0];
}

TEST(Schedule, RejectsTooFewSteps) {
  EXPECT_THROW(make_schedule(1), Error);
  EXPECT_THROW(make_schedule(0, ScheduleKind::kLinear), Error);
  EXPECT_NO_THROW(make_schedule(2));
}

TEST(Schedule, HundredStepCosineIsMonotoneAndFinite) {
  const NoiseSchedule s = make_schedule(100);
  EXPECT_EQ(s.T, 100);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  for (int t = 1; t <= 100; ++t) {
    const auto k = static_cast<std::size_t>(t);
    EXPECT_LT(s.alpha_bar[k], s.alpha_bar[k - 1]) << "t = " << t;
    EXPECT_GT(s.alpha_bar[k], 0.0);
    EXPECT_GT(s.beta[k], 0.0);
    EXPECT_LE(s.beta[k], 0.999);
  }
  ASSERT_EQ(s.steps(), 100);
  for (std::size_t k = 0; k < 100; ++k) {
    EXPECT_EQ(s.timesteps[k], static_cast<int>(k) + 1);
    EXPECT_TRUE(std::isfinite(s.step_alpha[k]) && s.step_alpha[k] > 1.0);
    EXPECT_TRUE(std::isfinite(s.step_gamma[k]) && s.step_gamma[k] > 0.0);
    EXPECT_TRUE(std::isfinite(s.step_sigma[k]) && s.step_sigma[k] >= 0.0);
  }
  EXPECT_EQ(s.beta[100], 0.999);
}

TEST(Schedule, MidpointMatchesClosedFormRatio) {
  for (int T : {10, 100, 1000}) {
    const NoiseSchedule s = make_schedule(T);
    const double f0 = std::pow(std::cos(0.008 / 1.008 * std::numbers::pi / 2.0), 2);
    const double fm = std::pow(std::cos(0.508 / 1.008 * std::numbers::pi / 2.0), 2);
    EXPECT_NEAR(s.alpha_bar[static_cast<std::size_t>(T / 2)], fm / f0, 1e-12) << "T = " << T;
  }
}

TEST(Schedule, ClosedFormMarginalEqualsComposedKernels) {
  for (ScheduleKind kind : {ScheduleKind::kSquaredCosine, ScheduleKind::kLinear})
    for (int T : {2, 5, 10, 20}) {
      const NoiseSchedule s = make_schedule(T, kind);
      double mean = 1.0, var = 0.0;  // x0 = 1 pushed through N(sqrt(1 - b) x, b) t times
      for (int t = 1; t <= T; ++t) {
        const double b = kind == ScheduleKind::kSquaredCosine ? oracle_cosine_beta(t, T) : oracle_linear_beta(t, T);
        mean *= std::sqrt(1.0 - b);
        var = (1.0 - b) * var + b;
        EXPECT_NEAR(closed_form_mean_coefficient(s, t), mean, 1e-6) << schedule_kind_name(kind) << " T=" << T;
        EXPECT_NEAR(std::pow(closed_form_std(s, t), 2), var, 1e-5) << schedule_kind_name(kind) << " T=" << T;
      }
    }
}

TEST(Stride, FullStrideIsIdentical) {
  for (int T : {2, 17, 100}) {
    const NoiseSchedule s = make_schedule(T);
    EXPECT_EQ(stride_schedule(s, T), s);
  }
}

TEST(Stride, TenOfHundredKeepsParentMarginals) {
  const NoiseSchedule parent = make_schedule(100);
  const NoiseSchedule s = stride_schedule(parent, 10);
  ASSERT_EQ(s.steps(), 10);
  EXPECT_EQ(s.alpha_bar, parent.alpha_bar);
  double var = 0.0, mean = 1.0;
  for (int k = 0; k < 10; ++k) {
    const int t = s.timesteps[static_cast<std::size_t>(k)];
    EXPECT_EQ(t, 10 * (k + 1));
    const double b = s.step_beta[static_cast<std::size_t>(k)];
    mean *= std::sqrt(1.0 - b);
    var = (1.0 - b) * var + b;
    EXPECT_NEAR(std::sqrt(var), std::sqrt(1.0 - parent.alpha_bar[static_cast<std::size_t>(t)]), 1e-6);
    EXPECT_NEAR(mean, std::sqrt(parent.alpha_bar[static_cast<std::size_t>(t)]), 1e-6);
  }
}

TEST(Stride, RejectsOutOfRangeStepCounts) {
  const NoiseSchedule parent = make_schedule(20);
  EXPECT_THROW(stride_schedule(parent, 0), Error);
  EXPECT_THROW(stride_schedule(parent, 21), Error);
  EXPECT_EQ(stride_schedule(parent, 3).timesteps, (std::vector<int>{6, 13, 20}));
}

// With exact eps the deterministic part of each update must equal the Gaussian
// posterior mean of q(x_prev | x_t, x0).
TEST(Stride, UpdateEqualsPosteriorMeanWithExactNoise) {
  const NoiseSchedule parent = make_schedule(100);
  for (int n : {100, 10, 7}) {
    const NoiseSchedule s = stride_schedule(parent, n);
    Rng rng(11);
    for (int k = 0; k < s.steps(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const double ab = parent.alpha_bar[static_cast<std::size_t>(s.timesteps[kk])];
      const double prev = k == 0 ? 1.0 : parent.alpha_bar[static_cast<std::size_t>(s.timesteps[kk - 1])];
      const double x0 = rng.uniform(-1, 1), eps = rng.normal();
      const double xt = std::sqrt(ab) * x0 + std::sqrt(1 - ab) * eps;
      const double bt = 1.0 - ab / prev;
      const double mu = std::sqrt(prev) * bt / (1 - ab) * x0 + std::sqrt(1 - bt) * (1 - prev) / (1 - ab) * xt;
      const double upd = s.step_alpha[kk] * (xt - s.step_gamma[kk] * eps);
      EXPECT_NEAR(upd, mu, 1e-9 * std::max(1.0, std::abs(mu))) << "n=" << n << " k=" << k;
      EXPECT_NEAR(s.step_sigma[kk] * s.step_sigma[kk], bt * (1 - prev) / (1 - ab), 1e-12);
    }
  }
}

TEST(AddNoise, ZeroTimestepReturnsInput) {
  const NoiseSchedule s = make_schedule(100);
  const std::vector<float> x0{0.25f, -0.75f, 1.f}, eps{3.f, -2.f, 0.5f};
  EXPECT_EQ(add_noise(x0, eps, 0, s), x0);
  EXPECT_THROW(add_noise(x0, eps, -1, s), Error);
  EXPECT_THROW(add_noise(x0, eps, 101, s), Error);
  EXPECT_THROW(add_noise(x0, std::vector<float>{1.f}, 5, s), Error);
}

TEST(AddNoise, MonteCarloStdMatchesSchedule) {
  const NoiseSchedule s = make_schedule(100);
  Rng rng(2024);
  for (int t : {1, 10, 50, 90, 100}) {
    std::vector<double> zero(10000, 0.0), eps(10000);
    for (auto& e : eps) e = rng.normal();
    const std::vector<double> x = add_noise(zero, eps, t, s);
    double m = 0.0, v = 0.0;
    for (double xi : x) m += xi;
    m /= x.size();
    for (double xi : x) v += (xi - m) * (xi - m);
    const double sd = std::sqrt(v / (x.size() - 1));
    const double expect = std::sqrt(1.0 - s.alpha_bar[static_cast<std::size_t>(t)]);
    EXPECT_NEAR(sd / expect, 1.0, 0.02) << "t = " << t;
  }
}

TEST(Space, LevelsRoundTripExactly) {
  data::TranslationMap t(16, 16);
  for (std::size_t k = 0; k < t.levels.size(); ++k) t.levels[k] = static_cast<std::uint8_t>(k % 256);
  const std::vector<float> x = DiffusionSpace::encode(t);
  for (float v : x) {
    EXPECT_GE(v, -1.f);
    EXPECT_LE(v, 1.f);
  }
  EXPECT_EQ(DiffusionSpace::decode(x, 16, 16), t);
  EXPECT_EQ(x[0], -1.f);
  EXPECT_EQ(DiffusionSpace::to_level(1.0), 255);
  EXPECT_EQ(DiffusionSpace::to_level(7.0), 255);
  EXPECT_EQ(DiffusionSpace::to_level(-7.0), 0);
  const std::vector<double> tau = DiffusionSpace::to_normalized(x, 16, 16);
  for (std::size_t k = 0; k < tau.size(); ++k) EXPECT_NEAR(tau[k], t.normalized(k), 1e-6);
}

TEST(Space, ChannelMajorLayout) {
  data::TranslationMap t(2, 3);
  t.levels[3 * 4 + 2] = 255;  // vertex 4, z
  const std::vector<float> x = DiffusionSpace::encode(t);
  EXPECT_EQ(x[2 * 6 + 4], 1.f);
  EXPECT_EQ(std::count(x.begin(), x.end(), 1.f), 1);
}

data::DepthObservation half_plane(int size, bool left) {
  data::DepthObservation o;
  o.size = size;
  o.normalized.assign(static_cast<std::size_t>(size) * size, 0.f);
  o.mask.assign(o.normalized.size(), 0);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (left ? c < size / 2 : r < size / 2) {
        const auto k = static_cast<std::size_t>(r) * size + c;
        o.mask[k] = 1;
        o.normalized[k] = static_cast<float>(55.0 + 145.0 * (r + c) / (2.0 * size));
      }
  return o;
}

std::vector<float> pattern_map(int h, int w, double sign) {
  std::vector<float> m(static_cast<std::size_t>(3) * h * w);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = static_cast<float>(sign * (k % 2 ? 0.5 : 0.3));
  return m;
}

std::vector<TrainingPair> random_pairs(const DenoiserConfig& c, int n, Rng& rng) {
  std::vector<TrainingPair> out(static_cast<std::size_t>(n));
  for (auto& p : out) {
    p.obs = half_plane(c.image_size, rng.uniform() < 0.5);
    p.map.resize(static_cast<std::size_t>(3) * c.grid_h * c.grid_w);
    for (auto& v : p.map) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  return out;
}

TEST(Denoiser, OutputShapeMatchesMap) {
  for (auto [h, w] : {std::pair{8, 8}, std::pair{25, 25}, std::pair{8, 12}}) {
    const DenoiserNet net = make_denoiser(DenoiserConfig::toy(32, h, w), 3);
    const data::DepthObservation o = half_plane(32, true);
    const nn::Tensor<float> codes = encode_observations(net, observation_batch({&o.normalized, &o.normalized}, 32));
    EXPECT_EQ(codes.shape(), (nn::Shape{2, 64}));
    nn::Tensor<float> x({2, 3, h, w}, 0.1f);
    const nn::Tensor<float> eps = predict_noise(net, x, 40, codes);
    EXPECT_EQ(eps.shape(), (nn::Shape{2, 3, h, w}));
    EXPECT_TRUE(eps.all_finite());
  }
}

TEST(Denoiser, MixedParityGridIsRejected) {
  try {
    make_denoiser(DenoiserConfig::toy(32, 8, 9), 1);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Denoiser, ParameterCountIsDeterministic) {
  const DenoiserConfig c;
  const DenoiserNet a = make_denoiser(c, 1), b = make_denoiser(c, 2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_EQ(a.parameter_count(), build_encoder(c).parameter_count() + build_denoiser(c).parameter_count());
  EXPECT_GT(a.parameter_count(), 500000u);
  EXPECT_LT(a.parameter_count(), 2500000u);
  const DenoiserNet a2 = make_denoiser(c, 1);
  for (std::size_t i = 0; i < a.denoiser_params.size(); ++i)
    EXPECT_EQ(a.denoiser_params[i].storage(), a2.denoiser_params[i].storage());
}

TEST(Denoiser, TimeEmbeddingIsSinusoidal) {
  std::vector<float> e(8);
  time_embedding(3, 8, e.data());
  for (int i = 0; i < 4; ++i) {
    const double f = std::pow(10000.0, -i / 4.0);
    EXPECT_NEAR(e[static_cast<std::size_t>(i)], std::sin(3 * f), 1e-6);
    EXPECT_NEAR(e[static_cast<std::size_t>(i) + 4], std::cos(3 * f), 1e-6);
  }
}

TEST(Train, UntrainedLossIsNearUnitVariance) {
  const DenoiserConfig c = DenoiserConfig::toy(32, 8, 8);
  DenoiserNet net = make_denoiser(c, 9);
  Rng rng(4);
  const std::vector<TrainingPair> pairs = random_pairs(c, 64, rng);
  TrainState st = TrainState::for_net(net, {});
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double loss = train_step(net, st, pairs, idx, make_schedule(100), rng, {});
  EXPECT_NEAR(loss, 1.0, 0.2);
}

TEST(Train, FixedSeedGivesIdenticalTrajectory) {
  const DenoiserConfig c = DenoiserConfig::toy(32, 8, 8);
  auto run = [&] {
    DenoiserNet net = make_denoiser(c, 5);
    Rng data_rng(6);
    const std::vector<TrainingPair> pairs = random_pairs(c, 20, data_rng);
    TrainOptions opt;
    opt.batch_size = 8;
    opt.adam.learning_rate = 1e-3;
    TrainState st = TrainState::for_net(net, opt.adam);
    Rng rng(7);
    std::vector<double> losses;
    for (int e = 0; e < 2; ++e)
      for (double l : train_epoch(net, st, pairs, make_schedule(100), rng, opt)) losses.push_back(l);
    EXPECT_EQ(st.epoch, 2);
    return std::pair{losses, net.denoiser_params};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first.size(), 6u);
  EXPECT_EQ(a.first, b.first);
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_EQ(a.second[i].storage(), b.second[i].storage());
}

TEST(Train, NonFiniteLossIsAnError) {
  const DenoiserConfig c = DenoiserConfig::toy(32, 8, 8);
  DenoiserNet net = make_denoiser(c, 1);
  net.encoder_params[0][0] = std::numeric_limits<float>::quiet_NaN();
  Rng rng(1);
  const std::vector<TrainingPair> pairs = random_pairs(c, 4, rng);
  TrainState st = TrainState::for_net(net, {});
  try {
    train_epoch(net, st, pairs, make_schedule(50), rng, {});
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
  EXPECT_THROW(train_epoch(net, st, {}, make_schedule(50), rng, {}), Error);
}

struct ToyRun {
  DenoiserNet net;
  std::vector<TrainingPair> pairs;
  std::vector<double> losses;
};

// Trains the toy profile on a fixed set of pairs, one batch of `batch` copies per step.
ToyRun train_toy(int n_pairs, int steps) {
  const DenoiserConfig c = DenoiserConfig::toy(32, 8, 8);
  ToyRun run{make_denoiser(c, 21), {}, {}};
  for (int q = 0; q < n_pairs; ++q) {
    TrainingPair p;
    p.obs = half_plane(32, q == 0);
    p.map = pattern_map(8, 8, q == 0 ? 1.0 : -1.0);
    run.pairs.push_back(std::move(p));
  }
  std::vector<TrainingPair> batch_pairs;
  for (int k = 0; k < 8; ++k) batch_pairs.push_back(run.pairs[static_cast<std::size_t>(k % n_pairs)]);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  TrainOptions opt;
  opt.adam.learning_rate = 1e-3;
  TrainState st = TrainState::for_net(run.net, opt.adam);
  const NoiseSchedule sched = make_schedule(100);
  Rng rng(33);
  for (int s = 0; s < steps; ++s) run.losses.push_back(train_step(run.net, st, batch_pairs, idx, sched, rng, opt));
  return run;
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
  return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(n), v.end(), 0.0) / static_cast<double>(n);
}

TEST(Train, SinglePairOverfitsAndSamplerRecoversIt) {
  const ToyRun run = train_toy(1, 2000);
  EXPECT_LT(tail_mean(run.losses, 100), 0.05);
  Rng rng(8);
  const NoiseSchedule sched = make_schedule(100);
  for (int rep = 0; rep < 3; ++rep) {
    const std::vector<float> x = sample_working(run.net, run.pairs[0].obs, sched, rng);
    double mae = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) mae += std::abs(x[k] - run.pairs[0].map[k]);
    EXPECT_LT(mae / static_cast<double>(x.size()), 0.05);
  }
}

const ToyRun& two_condition_toy() {
  static const ToyRun run = train_toy(2, 2000);
  return run;
}

TEST(Train, ConditioningSelectsMatchingMap) {
  const ToyRun& run = two_condition_toy();
  const NoiseSchedule s10 = stride_schedule(make_schedule(100), 10);
  Rng rng(9);
  for (int q = 0; q < 2; ++q) {
    const auto& mine = run.pairs[static_cast<std::size_t>(q)].map;
    const auto& other = run.pairs[static_cast<std::size_t>(1 - q)].map;
    std::size_t correct = 0, total = 0;
    for (int rep = 0; rep < 4; ++rep) {
      const std::vector<float> x = sample_working(run.net, run.pairs[static_cast<std::size_t>(q)].obs, s10, rng);
      for (std::size_t k = 0; k < x.size(); ++k, ++total) correct += std::abs(x[k] - mine[k]) < std::abs(x[k] - other[k]);
    }
    EXPECT_GT(static_cast<double>(correct) / total, 0.95) << "condition " << q;
  }
}

TEST(Sampler, TenStridedStepsMatchHundredStepOutputs) {
  const ToyRun& run = two_condition_toy();
  const NoiseSchedule full = make_schedule(100);
  Rng a(41), b(42);
  double total = 0.0;
  int n = 0;
  for (int rep = 0; rep < 4; ++rep)
    for (const auto& p : run.pairs) {
      const data::TranslationMap fast = sample(run.net, p.obs, full, 10, a);
      const data::TranslationMap slow = sample(run.net, p.obs, full, 100, b);
      total += metrics::ssim(fast, slow);
      ++n;
    }
  EXPECT_GE(total / n, 0.9);
  RecordProperty("mean_ssim", std::to_string(total / n));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Data: equal mixture of N(-1, s0^2) and N(1, s0^2). Exact eps is
// -sqrt(1 - ab) * d/dx log p_t(x).
std::vector<double> exact_mixture_eps(const std::vector<double>& x, int t, const NoiseSchedule& s, double s0) {
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  const double v = ab * s0 * s0 + 1.0 - ab, ra = std::sqrt(ab);
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lp = -(x[i] - ra) * (x[i] - ra) / (2 * v), lm = -(x[i] + ra) * (x[i] + ra) / (2 * v);
    const double wp = 1.0 / (1.0 + std::exp(lm - lp));
    const double score = -(wp * (x[i] - ra) + (1 - wp) * (x[i] + ra)) / v;
    e[i] = -std::sqrt(1.0 - ab) * score;
  }
  return e;
}

TEST(Sampler, AnalyticToyMatchesDataDistribution) {
  const NoiseSchedule s = make_schedule(100);
  const double s0 = 0.1;
  Rng rng(77);
  SamplerOptions opt;
  opt.clip_x0 = false;
  std::vector<double> x = reverse_process<double>(
      [&](const std::vector<double>& xt, int t) { return exact_mixture_eps(xt, t, s, s0); }, 5000, s, rng, opt);
  std::sort(x.begin(), x.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = 0.5 * normal_cdf((x[i] + 1) / s0) + 0.5 * normal_cdf((x[i] - 1) / s0);
    ks = std::max({ks, std::abs(F - static_cast<double>(i) / x.size()), std::abs(F - static_cast<double>(i + 1) / x.size())});
  }
  EXPECT_LT(ks, 0.1);
  const auto negatives = std::count_if(x.begin(), x.end(), [](double v) { return v < 0; });
  EXPECT_NEAR(static_cast<double>(negatives) / x.size(), 0.5, 0.03);
}

TEST(Sampler, AnalyticTwoPointToyLandsOnBothModes) {
  const NoiseSchedule s = make_schedule(100);
  Rng rng(78);
  auto eps = [&](const std::vector<double>& xt, int t) {
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    std::vector<double> e(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i) {
      const double post_mean = std::tanh(std::sqrt(ab) * xt[i] / (1.0 - ab));
      e[i] = (xt[i] - std::sqrt(ab) * post_mean) / std::sqrt(1.0 - ab);
    }
    return e;
  };
  const std::vector<double> x = reverse_process<double>(eps, 5000, s, rng);
  std::size_t near_minus = 0, near_plus = 0;
  for (double v : x) {
    near_minus += std::abs(v + 1) < 0.05;
    near_plus += std::abs(v - 1) < 0.05;
  }
  EXPECT_EQ(near_minus + near_plus, x.size());
  EXPECT_NEAR(static_cast<double>(near_minus) / x.size(), 0.5, 0.03);
}

TEST(Sampler, SameSeedSameMap) {
  const DenoiserNet net = make_denoiser(DenoiserConfig::toy(32, 8, 8), 4);
  const data::DepthObservation o = half_plane(32, false);
  const NoiseSchedule s = make_schedule(100);
  Rng a(5), b(5), c(6);
  const data::TranslationMap ma = sample(net, o, s, 10, a), mb = sample(net, o, s, 10, b), mc = sample(net, o, s, 10, c);
  EXPECT_EQ(ma, mb);
  EXPECT_NE(ma, mc);
  EXPECT_EQ(ma.grid_h, 8);
  EXPECT_EQ(ma.levels.size(), 192u);
}

TEST(Sampler, BatchOutputsAreFinite) {
  const DenoiserNet net = make_denoiser(DenoiserConfig::toy(32, 25, 25), 4);
  const data::DepthObservation o1 = half_plane(32, false), o2 = half_plane(32, true);
  Rng rng(1);
  const auto maps = sample_batch(net, {&o1, &o2}, stride_schedule(make_schedule(100), 10), rng);
  ASSERT_EQ(maps.size(), 2u);
  for (const auto& m : maps) {
    ASSERT_EQ(m.size(), 3u * 25 * 25);
    for (float v : m) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(sample_batch(net, {}, make_schedule(10), rng), Error);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("clothdiff_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Checkpoint ck{make_denoiser(DenoiserConfig::toy(32, 8, 12), 17), make_schedule(100, ScheduleKind::kLinear), 99, 3,
                json{{"note", "provenance"}}};
  Rng rng(3);
  for (auto& t : ck.net.denoiser_params)
    for (auto& v : t.storage()) v += static_cast<float>(rng.normal() * 1e-3);
  save_checkpoint(dir_ / "m.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(back.net.config, ck.net.config);
  EXPECT_EQ(back.schedule, ck.schedule);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.config, ck.config);
  for (std::size_t i = 0; i < ck.net.encoder_params.size(); ++i)
    EXPECT_EQ(back.net.encoder_params[i].storage(), ck.net.encoder_params[i].storage());
  for (std::size_t i = 0; i < ck.net.denoiser_params.size(); ++i)
    EXPECT_EQ(back.net.denoiser_params[i].storage(), ck.net.denoiser_params[i].storage());

  std::ifstream in(dir_ / "m.ckpt", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes.substr(0, 4), "RGD1");
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  EXPECT_EQ(bytes.size(), 8 + len + 4 * ck.net.parameter_count());
  const json meta = json::parse(bytes.substr(8, len));
  EXPECT_EQ(meta.at("layout").size(), ck.net.encoder_params.size() + ck.net.denoiser_params.size());
  EXPECT_EQ(meta.at("layout").at(0).at("name"), "enc.stem.weight");
  // First stored float is the first encoder weight, little-endian.
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + len + b])) << (8 * b);
  EXPECT_EQ(std::bit_cast<float>(bits), ck.net.encoder_params[0][0]);
}

TEST_F(CheckpointTest, CorruptFilesAreRejected) {
  const Checkpoint ck{make_denoiser(DenoiserConfig::toy(32, 8, 8), 1), make_schedule(20), 1, 0, json::object()};
  save_checkpoint(dir_ / "ok.ckpt", ck);
  std::ifstream in(dir_ / "ok.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto expect_format_error = [&](const std::string& content) {
    std::ofstream(dir_ / "bad.ckpt", std::ios::binary) << content;
    try {
      load_checkpoint(dir_ / "bad.ckpt");
      FAIL() << "expected a format error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    }
  };
  expect_format_error("XXXX" + bytes.substr(4));
  expect_format_error(bytes.substr(0, bytes.size() - 4));
  expect_format_error(bytes + "pad!");
  expect_format_error(bytes.substr(0, 6));
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), Error);
}

}  // namespace
}  // namespace clothdiff::diffusion
