// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. A criterion number on the command line runs
// only that criterion.

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "../gradcheck.hpp"
#include "clothdiff/cli/cli.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/generate.hpp"
#include "clothdiff/diffusion/sample.hpp"
#include "clothdiff/diffusion/schedule.hpp"
#include "clothdiff/diffusion/train.hpp"
#include "clothdiff/metrics/chamfer.hpp"
#include "clothdiff/metrics/ssim.hpp"
#include "clothdiff/pipeline/pipeline.hpp"
#include "clothdiff/registration/icp.hpp"
#include "clothdiff/registration/nonrigid.hpp"

namespace {

using namespace clothdiff;
using Clock = std::chrono::steady_clock;
using registration::Points;
namespace fs = std::filesystem;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& c : nn::testing::gradcheck_cases())
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const double err = nn::testing::max_relative_gradient_error(c, seed);
      worst = std::max(worst, err);
      v.check(err < 1e-4, c.name + " seed " + std::to_string(seed) + " rel err " + fmt(err));
    }
  const double t = since(t0);
  v.check(t < 60.0, "runtime " + fmt(t) + " s");
  v.note("layer cases " + std::to_string(nn::testing::gradcheck_cases().size()) + ", worst rel err " + fmt(worst) +
         ", " + fmt(t) + " s");
  return v;
}

// ---------------------------------------------------------------- criterion 2

Verdict codec_bound() {
  Verdict v;
  data::GenerateConfig g;
  g.seed = 2;
  g.episodes = 100;
  g.actions_per_episode = 10;
  g.grid = 25;
  g.pick_place.max_settle_steps = 300;
  const auto tg = Clock::now();
  const data::Dataset d = data::generate_dataset(g);
  const double gen_t = since(tg);
  v.check(d.samples.size() >= 1000, "only " + std::to_string(d.samples.size()) + " meshes");
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& s : d.samples) {
    const ClothMesh back = data::decode_translation_map(data::encode_translation_map(s.mesh, d.canonical), d.canonical);
    const Vec3 c = s.mesh.centroid();
    for (std::size_t k = 0; k < back.vertices.size(); ++k) {
      const Vec3 want = d.canonical.to_normalized(s.mesh.vertices[k] - Vec3(c.x(), c.y(), 0.0));
      worst = std::max(worst, (want - d.canonical.to_normalized(back.vertices[k])).cwiseAbs().maxCoeff());
    }
  }
  const double t = since(t0);
  v.check(worst <= 0.011765, "max error " + fmt(worst));
  v.check(t < 10.0, "codec runtime " + fmt(t) + " s");
  v.note(std::to_string(d.samples.size()) + " meshes (25x25), max error " + fmt(worst) + " normalized, codec " + fmt(t) +
         " s, simulation " + fmt(gen_t) + " s");
  return v;
}

// ---------------------------------------------------------------- criterion 3

double oracle_beta(diffusion::ScheduleKind kind, int t, int T) {
  if (kind == diffusion::ScheduleKind::kLinear) {
    const double lo = 1000.0 / T * 1e-4, hi = 1000.0 / T * 0.02;
    return std::min(lo + (hi - lo) * (t - 1) / (T - 1), 0.999);
  }
  auto f = [T](double u) {
    const double c = std::cos((u / T + 0.008) / 1.008 * std::numbers::pi / 2.0);
    return c * c;
  };
  return std::min(1.0 - f(t) / f(t - 1), 0.999);
}

Verdict schedule_consistency() {
  using namespace diffusion;
  Verdict v;
  double worst_mean = 0.0, worst_var = 0.0;
  for (ScheduleKind kind : {ScheduleKind::kSquaredCosine, ScheduleKind::kLinear})
    for (int T = 2; T <= 20; ++T) {
      const NoiseSchedule s = make_schedule(T, kind);
      double mean = 1.0, var = 0.0;
      for (int t = 1; t <= T; ++t) {
        const double b = oracle_beta(kind, t, T);
        mean *= std::sqrt(1.0 - b);
        var = (1.0 - b) * var + b;
        const double m = add_noise(std::vector<double>{1.0}, std::vector<double>{0.0}, t, s)[0];
        const double sd = add_noise(std::vector<double>{0.0}, std::vector<double>{1.0}, t, s)[0];
        worst_mean = std::max(worst_mean, std::abs(m - mean));
        worst_var = std::max(worst_var, std::abs(sd * sd - var));
      }
    }
  v.check(worst_mean < 1e-6, "mean deviation " + fmt(worst_mean));
  v.check(worst_var < 1e-5, "variance deviation " + fmt(worst_var));

  const NoiseSchedule parent = make_schedule(100);
  const NoiseSchedule s = stride_schedule(parent, 10);
  double worst_stride = 0.0;
  double mean = 1.0, var = 0.0;
  for (int k = 0; k < s.steps(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const double b = s.step_beta[kk];
    mean *= std::sqrt(1.0 - b);
    var = (1.0 - b) * var + b;
    const double ab = parent.alpha_bar[static_cast<std::size_t>(s.timesteps[kk])];
    worst_stride = std::max({worst_stride, std::abs(mean - std::sqrt(ab)), std::abs(std::sqrt(var) - std::sqrt(1 - ab))});
  }
  v.check(s.steps() == 10, "strided schedule has " + std::to_string(s.steps()) + " steps");
  v.check(worst_stride < 1e-6, "strided marginal deviation " + fmt(worst_stride));
  v.note("T=2..20 mean " + fmt(worst_mean) + ", variance " + fmt(worst_var) + "; 10-of-100 " + fmt(worst_stride));
  return v;
}

// ---------------------------------------------------------------- criterion 4

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

struct ToyRun {
  diffusion::DenoiserNet net;
  std::vector<diffusion::TrainingPair> pairs;
  std::vector<double> losses;
};

ToyRun train_toy(int n_pairs, int steps) {
  using namespace diffusion;
  ToyRun run{make_denoiser(DenoiserConfig::toy(32, 8, 8), 21), {}, {}};
  for (int q = 0; q < n_pairs; ++q)
    run.pairs.push_back({half_plane(32, q == 0), pattern_map(8, 8, q == 0 ? 1.0 : -1.0)});
  std::vector<TrainingPair> batch;
  for (int k = 0; k < 8; ++k) batch.push_back(run.pairs[static_cast<std::size_t>(k % n_pairs)]);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  TrainOptions opt;
  opt.adam.learning_rate = 1e-3;
  TrainState st = TrainState::for_net(run.net, opt.adam);
  const NoiseSchedule sched = make_schedule(100);
  Rng rng(33);
  for (int s = 0; s < steps; ++s) run.losses.push_back(train_step(run.net, st, batch, idx, sched, rng, opt));
  return run;
}

Verdict toy_overfit() {
  using namespace diffusion;
  Verdict v;
  const auto t0 = Clock::now();
  const ToyRun one = train_toy(1, 2000);
  const double tail = std::accumulate(one.losses.end() - 100, one.losses.end(), 0.0) / 100.0;
  v.check(tail < 0.05, "single-pair loss " + fmt(tail));

  const ToyRun two = train_toy(2, 2000);
  const NoiseSchedule s10 = stride_schedule(make_schedule(100), 10);
  Rng rng(9);
  double worst_acc = 1.0;
  for (int q = 0; q < 2; ++q) {
    const auto& mine = two.pairs[static_cast<std::size_t>(q)].map;
    const auto& other = two.pairs[static_cast<std::size_t>(1 - q)].map;
    std::size_t correct = 0, total = 0;
    for (int rep = 0; rep < 4; ++rep) {
      const std::vector<float> x = sample_working(two.net, two.pairs[static_cast<std::size_t>(q)].obs, s10, rng);
      for (std::size_t k = 0; k < x.size(); ++k, ++total) correct += std::abs(x[k] - mine[k]) < std::abs(x[k] - other[k]);
    }
    worst_acc = std::min(worst_acc, static_cast<double>(correct) / static_cast<double>(total));
  }
  v.check(worst_acc > 0.95, "nearest-class accuracy " + fmt(worst_acc));
  const double t = since(t0);
  v.check(t < 600.0, "runtime " + fmt(t) + " s");
  v.note("single-pair loss " + fmt(tail) + " after 2000 steps, two-condition accuracy " + fmt(worst_acc) + ", " + fmt(t) +
         " s");
  return v;
}

// ---------------------------------------------------------------- criterion 5

Verdict end_to_end() {
  using namespace diffusion;
  Verdict v;
  const auto t0 = Clock::now();
  data::GenerateConfig g;
  g.seed = 2024;
  g.episodes = 220;
  g.actions_per_episode = 10;
  g.grid = 8;
  g.image_size = 96;
  g.pick_place.max_settle_steps = 300;
  const data::Dataset train = data::generate_dataset(g);
  g.seed = 2025;
  g.episodes = 20;
  const data::Dataset test = data::generate_dataset(g);

  const int epochs = 100;
  const std::vector<TrainingPair> pairs = pipeline::training_pairs(train, 96);
  DenoiserNet net = make_denoiser(DenoiserConfig::toy(96, 8, 8), 1);
  TrainOptions opt;
  opt.batch_size = 64;
  opt.adam.learning_rate = 1e-3;
  TrainState st = TrainState::for_net(net, opt.adam);
  const NoiseSchedule sched = make_schedule(100);
  Rng rng(3);
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    const std::vector<double> l = train_epoch(net, st, pairs, sched, rng, opt);
    last = std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
  }

  pipeline::EstimateConfig ec;
  ec.refine = true;
  double raw = 0.0, refined = 0.0, flat = 0.0, secs = 0.0;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    const data::Sample& s = test.samples[i];
    Rng r(derive_seed(11, i));
    ec.refinement.seed = derive_seed(12, i);
    const pipeline::Estimate e = pipeline::estimate(net, sched, test.canonical, s.raw, test.info.camera, r, ec);
    raw += metrics::chamfer(e.placed, s.mesh);
    refined += metrics::chamfer(*e.refined, s.mesh);
    flat += metrics::chamfer(pipeline::placed_flat_baseline(test.canonical, s.raw, test.info.camera), s.mesh);
    secs += e.seconds - e.refine_seconds;
  }
  const double n = static_cast<double>(test.samples.size());
  raw /= n;
  refined /= n;
  flat /= n;
  const double t = since(t0);
  v.check(raw < flat, "trained " + fmt(raw) + " vs flat baseline " + fmt(flat));
  v.check(refined < raw, "refined " + fmt(refined) + " vs raw " + fmt(raw));
  v.check(t < 4 * 3600.0, "runtime " + fmt(t) + " s");
  v.note(std::to_string(pairs.size()) + " train / " + std::to_string(test.samples.size()) + " test states, " +
         std::to_string(epochs) + " epochs (final loss " + fmt(last) + "); mean Chamfer m^2: flat baseline " + fmt(flat) +
         ", raw " + fmt(raw) + ", +SPR " + fmt(refined) + "; " + fmt(secs / n) + " s/state without refinement; " + fmt(t) +
         " s total");
  return v;
}

// ---------------------------------------------------------------- criterion 6

Points random_points(Rng& rng, int n, int d) {
  Points p(n, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) p(i, a) = rng.uniform();
  return p;
}

Points grid_points(int h, int w, double side, const std::function<double(double, double)>& height = {}) {
  Points p(h * w, 3);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double x = -side / 2 + side * j / (w - 1), y = -side / 2 + side * i / (h - 1);
      p.row(i * w + j) << x, y, height ? height(x, y) : 0.0;
    }
  return p;
}

Points top_view_of_bend(double rho, int n, Rng& rng) {
  const double xm = rho * std::sin(0.5 / rho);
  Points p(n, 3);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-xm, xm), s = rho * std::asin(x / rho);
    p.row(i) << x, rng.uniform(-0.5, 0.5), rho * (1 - std::cos(s / rho));
  }
  return p;
}

double max_edge_distortion(const Points& before, const Points& after, int h, int w) {
  double worst = 0.0;
  auto check = [&](int a, int b) {
    const double l0 = (before.row(a) - before.row(b)).norm(), l1 = (after.row(a) - after.row(b)).norm();
    worst = std::max(worst, std::abs(l1 / l0 - 1.0));
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (j + 1 < w) check(i * w + j, i * w + j + 1);
      if (i + 1 < h) check(i * w + j, (i + 1) * w + j);
    }
  return worst;
}

double max_rise(const registration::RegResult& r) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < r.objective.size(); ++k) worst = std::max(worst, r.objective[k] - r.objective[k - 1]);
  return worst;
}

Verdict registration_suite() {
  using namespace registration;
  Verdict v;
  const Points y = grid_points(10, 10, 1.0, [](double x, double u) { return 0.1 * std::sin(3 * x) * std::cos(2 * u); });
  const double self_cpd = (cpd_nonrigid(y, y).aligned - y).rowwise().norm().maxCoeff();
  const double self_spr = (spr_nonrigid(y, y).aligned - y).rowwise().norm().maxCoeff();
  v.check(self_cpd < 1e-6 && self_spr < 1e-6, "self-registration " + fmt(self_cpd) + " / " + fmt(self_spr));

  Rng rng(11);
  const Points x = random_points(rng, 200, 3);
  Points moved = x;
  moved.col(0).array() += 0.3;
  Points err = cpd_nonrigid(x, moved).aligned - moved;
  err.col(0).array() += 0.3;
  const double rmse = std::sqrt(err.rowwise().squaredNorm().mean());
  v.check(rmse < 1e-3, "translation RMSE " + fmt(rmse));

  Rng mr(2024);
  double rise = -1.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int m = mr.uniform_int(20, 60), n = mr.uniform_int(20, 120);
    const Points ty = random_points(mr, m, 3);
    Points tx = random_points(mr, n, 3);
    for (Eigen::Index i = 0; i < tx.rows(); ++i) tx(i, 2) = 0.3 * std::sin(5 * tx(i, 0)) + 0.05 * mr.normal();
    RegistrationConfig cfg;
    cfg.lambda = mr.uniform(0.5, 4.0);
    cfg.outlier_weight = mr.uniform(0.0, 0.3);
    cfg.max_iterations = 60;
    rise = std::max({rise, max_rise(cpd_nonrigid(tx, ty, cfg)), max_rise(spr_nonrigid(tx, ty, cfg))});
  }
  v.check(rise <= 1e-9, "objective rose by " + fmt(rise));

  const Points tmpl = grid_points(12, 12, 1.0);
  Rng br(1);
  std::string bends;
  for (const double rho : {0.3, 0.5}) {
    const Points obs = top_view_of_bend(rho, 600, br);
    const double dc = max_edge_distortion(tmpl, cpd_nonrigid(obs, tmpl).aligned, 12, 12);
    const double ds = max_edge_distortion(tmpl, spr_nonrigid(obs, tmpl).aligned, 12, 12);
    v.check(ds < dc, "bend " + fmt(rho) + ": SPR " + fmt(ds) + " vs CPD " + fmt(dc));
    bends += " rho " + fmt(rho) + " SPR " + fmt(ds) + " < CPD " + fmt(dc) + ";";
  }
  v.note("self " + fmt(std::max(self_cpd, self_spr)) + ", translation RMSE " + fmt(rmse) + ", max objective rise " +
         fmt(rise) + " over 50x2 runs, edge distortion" + bends);
  return v;
}

// ---------------------------------------------------------------- criterion 7

Points anisotropic_cloud(Rng& rng, int n) {
  Points p(n, 2);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    p.row(i) << 2.0 * u + 0.06 * rng.normal(), 0.6 * u * u + 0.25 * rng.uniform();
  }
  return p;
}

Verdict icp_recovery() {
  using namespace registration;
  Verdict v;
  Rng rng(17);
  double worst_angle = 0.0, worst_t = 0.0;
  int worst_iters = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Points s = anisotropic_cloud(rng, 200);
    const double theta = trial == 0 ? std::numbers::pi / 6 : rng.uniform(-45.0, 45.0) * std::numbers::pi / 180.0;
    const auto tf = Rigid2::from_angle(theta, trial == 0 ? Eigen::Vector2d(0.2, -0.1)
                                                         : Eigen::Vector2d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)));
    const IcpResult r = icp_2d(s, tf.apply(s));
    worst_angle = std::max(worst_angle, std::abs(r.transform.angle() - theta));
    worst_t = std::max(worst_t, (r.transform.t - tf.t).norm());
    worst_iters = std::max(worst_iters, r.iterations);
  }
  v.check(worst_angle <= 1e-3, "angle error " + fmt(worst_angle));
  v.check(worst_t <= 1e-3, "translation error " + fmt(worst_t));
  v.check(worst_iters <= 50, "iterations " + std::to_string(worst_iters));
  v.note("50 transforms with |theta| <= 45 deg: angle error " + fmt(worst_angle) + " rad, translation " + fmt(worst_t) +
         ", at most " + std::to_string(worst_iters) + " iterations per start");
  return v;
}

// ---------------------------------------------------------------- criterion 8

double brute_chamfer(const Points& a, const Points& b) {
  auto one = [](const Points& p, const Points& q) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) s += (q.rowwise() - p.row(i)).rowwise().squaredNorm().minCoeff();
    return s / static_cast<double>(p.rows());
  };
  return one(a, b) + one(b, a);
}

Verdict metric_properties() {
  Verdict v;
  Rng rng(5);
  double oracle = 0.0, symmetry = 0.0, homog = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Points a = random_points(rng, rng.uniform_int(1, 200), 3), b = random_points(rng, rng.uniform_int(1, 200), 3);
    const double c = metrics::chamfer(a, b);
    oracle = std::max(oracle, std::abs(c - brute_chamfer(a, b)));
    symmetry = std::max(symmetry, std::abs(c - metrics::chamfer(b, a)));
    const double s = rng.uniform(0.1, 5.0);
    homog = std::max(homog, std::abs(metrics::chamfer(Points(s * a), Points(s * b)) - s * s * c));
  }
  v.check(oracle <= 1e-12, "oracle deviation " + fmt(oracle));
  v.check(symmetry == 0.0, "asymmetry " + fmt(symmetry));
  v.check(homog <= 1e-9, "homogeneity deviation " + fmt(homog));

  double self = 0.0, ssim_sym = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    metrics::Image a(rng.uniform_int(8, 40), rng.uniform_int(8, 40), 3), b(a.height, a.width, 3);
    for (auto& x : a.values) x = rng.uniform(0.0, 255.0);
    for (std::size_t k = 0; k < b.values.size(); ++k) b.values[k] = std::clamp(a.values[k] + 40.0 * rng.normal(), 0.0, 255.0);
    self = std::max(self, std::abs(metrics::ssim(a, a) - 1.0));
    ssim_sym = std::max(ssim_sym, std::abs(metrics::ssim(a, b) - metrics::ssim(b, a)));
  }
  v.check(self <= 1e-12, "ssim(im, im) deviation " + fmt(self));
  v.check(ssim_sym <= 1e-12, "ssim asymmetry " + fmt(ssim_sym));
  v.note("Chamfer vs brute force " + fmt(oracle) + ", symmetry " + fmt(symmetry) + ", a^2 homogeneity " + fmt(homog) +
         "; SSIM self " + fmt(self) + ", symmetry " + fmt(ssim_sym));
  return v;
}

// ---------------------------------------------------------------- criterion 9

Verdict speed_ordering() {
  using namespace diffusion;
  Verdict v;
  const DenoiserNet net = make_denoiser(DenoiserConfig::toy(96, 25, 25), 4);
  const NoiseSchedule sched = make_schedule(100);
  const data::DepthObservation obs = half_plane(96, true);
  Rng rng(1);
  std::vector<double> infer_t;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = Clock::now();
    (void)sample(net, obs, sched, 10, rng);
    infer_t.push_back(since(t0));
  }
  const Points tmpl = grid_points(25, 25, 1.0);
  std::vector<double> spr_t;
  int iters = 0;
  for (int rep = 0; rep < 3; ++rep) {
    Rng br(100 + rep);
    const Points obs_cloud = top_view_of_bend(0.4, 2000, br);
    const auto t0 = Clock::now();
    iters = registration::spr_nonrigid(obs_cloud, tmpl).iterations;
    spr_t.push_back(since(t0));
  }
  std::sort(infer_t.begin(), infer_t.end());
  std::sort(spr_t.begin(), spr_t.end());
  const double ti = infer_t[infer_t.size() / 2], ts = spr_t[spr_t.size() / 2];
  v.check(ti < ts, "inference " + fmt(ti) + " s vs SPR " + fmt(ts) + " s");
  v.note("median 10-step toy inference " + fmt(ti) + " s vs SPR (625 template, 2000 observed, " + std::to_string(iters) +
         " iterations) " + fmt(ts) + " s");
  return v;
}

// ---------------------------------------------------------------- criterion 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::directory_iterator(a)) fa.push_back(e.path().filename());
  for (const auto& e : fs::directory_iterator(b)) fb.push_back(e.path().filename());
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

Verdict determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "clothdiff_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  for (const char* d : {"a", "b"})
    v.check(cli({"gen-data", "--out", (root / d).string(), "--episodes", "3", "--actions", "3", "--grid", "8", "--img",
                 "32", "--seed", "9"}) == 0,
            "gen-data run failed");
  const bool data_same = same_tree(root / "a", root / "b");
  v.check(data_same, "gen-data outputs differ");
  for (const char* m : {"a.ckpt", "b.ckpt"})
    v.check(cli({"train", "--data", (root / "a").string(), "--out", (root / m).string(), "--epochs", "2", "--batch", "4",
                 "--seed", "3", "--jobs", "1"}) == 0,
            "train run failed");
  const bool ckpt_same = slurp(root / "a.ckpt") == slurp(root / "b.ckpt") && !slurp(root / "a.ckpt").empty();
  v.check(ckpt_same, "checkpoints differ");

  const diffusion::Checkpoint ck = diffusion::load_checkpoint(root / "a.ckpt");
  const data::Dataset d = data::read_dataset(root / "a");
  const data::DepthObservation obs = data::preprocess_depth(d.samples[0].raw, 32);
  Rng r1(77), r2(77);
  const bool sample_same = diffusion::sample(ck.net, obs, ck.schedule, 10, r1) == diffusion::sample(ck.net, obs, ck.schedule, 10, r2);
  v.check(sample_same, "samples differ");
  fs::remove_all(root);
  v.note(std::string("gen-data ") + (data_same ? "byte-identical" : "differs") + ", serial train " +
         (ckpt_same ? "byte-identical" : "differs") + ", sample " + (sample_same ? "identical" : "differs"));
  return v;
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient suite", gradient_suite},        {2, "codec bound", codec_bound},
      {3, "schedule consistency", schedule_consistency}, {4, "toy overfit", toy_overfit},
      {5, "end-to-end desk scale", end_to_end},     {6, "registration suite", registration_suite},
      {7, "ICP recovery", icp_recovery},           {8, "metric properties", metric_properties},
      {9, "speed ordering", speed_ordering},       {10, "determinism", determinism},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += !v.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
