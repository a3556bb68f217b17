#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clothdiff/cli/run_config.hpp"
#include "clothdiff/core/error.hpp"
#include "clothdiff/core/parallel.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/data/dataset.hpp"
#include "clothdiff/data/generate.hpp"
#include "clothdiff/diffusion/checkpoint.hpp"
#include "clothdiff/io/ply.hpp"
#include "clothdiff/io/preview.hpp"
#include "clothdiff/metrics/report.hpp"
#include "clothdiff/pipeline/pipeline.hpp"
#include "clothdiff/registration/icp.hpp"
#include "clothdiff/registration/nonrigid.hpp"

namespace clothdiff::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path.string());
}

/// Point sets for `register`: a grid mesh PLY, or whitespace/comma separated
/// rows of coordinates ('#' starts a comment).
inline Eigen::MatrixXd read_points(const fs::path& path) {
  if (path.extension() == ".ply") return registration::to_points(io::import_mesh(path.string()).vertices);
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open for reading: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = line.substr(0, line.find('#'));
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> r;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(tok, &used));
        require(used == tok.size(), ErrorKind::kFormat, "bad number '" + tok + "' in " + path.string());
      } catch (const std::logic_error&) {
        fail(ErrorKind::kFormat, "bad number '" + tok + "' in " + path.string());
      }
    }
    if (r.empty()) continue;
    require(rows.empty() || r.size() == rows[0].size(), ErrorKind::kFormat, "ragged point rows in " + path.string());
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), ErrorKind::kFormat, "no points in " + path.string());
  Eigen::MatrixXd p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t a = 0; a < rows[i].size(); ++a)
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = rows[i][a];
  return p;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index a = 0; a < m.cols(); ++a) r.push_back(m(i, a));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// "DIR/index" to (DIR, index).
inline std::pair<fs::path, std::size_t> split_sample(const std::string& spec) {
  const fs::path p(spec);
  const std::string idx = p.filename().string();
  if (idx.empty() || !std::all_of(idx.begin(), idx.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw UsageError("--sample must look like DIR/index, got '" + spec + "'");
  const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  if (!fs::is_directory(dir)) throw UsageError("dataset directory not found: " + dir.string());
  return {dir, static_cast<std::size_t>(std::stoull(idx))};
}

struct Model {
  diffusion::Checkpoint ck;
  int infer_steps = 10;
};

inline Model load_model(const fs::path& path, const std::optional<int>& infer_steps) {
  Model m{diffusion::load_checkpoint(path), 10};
  const json& c = m.ck.config;
  if (c.contains("train") && c["train"].contains("infer_steps")) m.infer_steps = c["train"]["infer_steps"].get<int>();
  if (infer_steps) m.infer_steps = *infer_steps;
  return m;
}

inline void check_compatible(const Model& m, const data::Dataset& d) {
  const auto& c = m.ck.net.config;
  require(c.grid_h == d.info.grid_h && c.grid_w == d.info.grid_w && c.image_size == d.info.image_size, ErrorKind::kShape,
          "checkpoint was trained for a " + std::to_string(c.grid_h) + "x" + std::to_string(c.grid_w) + " grid at " +
              std::to_string(c.image_size) + " px, the dataset is " + std::to_string(d.info.grid_h) + "x" +
              std::to_string(d.info.grid_w) + " at " + std::to_string(d.info.image_size) + " px");
}

inline pipeline::EstimateConfig estimate_config(const RunConfig& rc, const Model& m, bool refine, std::uint64_t seed) {
  pipeline::EstimateConfig e;
  e.infer_steps = m.infer_steps;
  e.refine = refine;
  e.refinement = rc.refinement(seed);
  return e;
}

inline bool parse_refine(const std::string& s) {
  if (s == "none") return false;
  if (s == "spr") return true;
  throw UsageError("--refine must be 'none' or 'spr', got '" + s + "'");
}

// Subcommand bodies. Each receives the fully resolved configuration.

inline int gen_data(const RunConfig& rc, const fs::path& out, std::ostream& log) {
  const data::GenerateConfig g = rc.generate();
  log << "generating " << g.episodes << " episodes x " << g.actions_per_episode << " actions on a " << g.grid << "x"
      << g.grid << " grid\n";
  const data::Dataset d = data::generate_dataset(g);
  data::write_dataset(d, out);
  write_json(out / "run_config.json", rc.values);
  log << "wrote " << d.samples.size() << " samples to " << out.string() << '\n';
  return kExitOk;
}

inline int train(const RunConfig& rc, const fs::path& data_dir, const fs::path& out, std::ostream& log) {
  const data::Dataset d = data::read_dataset(data_dir);
  require(!d.samples.empty(), ErrorKind::kInvalidArgument, "dataset has no samples: " + data_dir.string());
  const json& t = rc.values.at("train");
  const auto seed = t.at("seed").get<std::uint64_t>();
  const int epochs = t.at("epochs").get<int>();
  if (epochs < 0) throw UsageError("--epochs must be non-negative");
  const diffusion::NoiseSchedule sched = diffusion::make_schedule(
      t.at("train_steps").get<int>(), diffusion::parse_schedule_kind(t.at("schedule").get<std::string>()));
  diffusion::stride_schedule(sched, t.at("infer_steps").get<int>());  // rejects an impossible step count up front
  const auto pairs = pipeline::training_pairs(d, d.info.image_size);
  diffusion::Checkpoint ck{diffusion::make_denoiser(rc.denoiser(d.info.image_size, d.info.grid_h, d.info.grid_w), seed),
                           sched, seed, 0, rc.values};
  const diffusion::TrainOptions opt = rc.train_options();
  diffusion::TrainState st = diffusion::TrainState::for_net(ck.net, opt.adam);
  Rng rng(derive_seed(seed, 1));
  log << "training on " << pairs.size() << " pairs, " << ck.net.parameter_count() << " parameters\n";
  for (int e = 0; e < epochs; ++e) {
    const std::vector<double> losses = diffusion::train_epoch(ck.net, st, pairs, sched, rng, opt);
    double mean = 0.0;
    for (double l : losses) mean += l;
    log << "epoch " << e + 1 << "/" << epochs << " loss " << mean / static_cast<double>(losses.size()) << '\n';
  }
  ck.epoch = st.epoch;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  diffusion::save_checkpoint(out, ck);
  log << "saved " << out.string() << '\n';
  return kExitOk;
}

inline int infer(const RunConfig& rc, const fs::path& model_path, const std::string& sample, const fs::path& out,
                 const std::string& refine, const std::optional<int>& steps, std::ostream& stdout_) {
  const bool do_refine = parse_refine(refine);
  const auto [dir, index] = split_sample(sample);
  const Model m = load_model(model_path, steps);
  const data::Dataset d = data::read_dataset(dir);
  check_compatible(m, d);
  if (index >= d.samples.size())
    throw UsageError("sample index " + std::to_string(index) + " is out of range (" + std::to_string(d.samples.size()) +
                     " samples)");
  const auto seed = rc.values.at("infer").at("seed").get<std::uint64_t>();
  Rng rng(derive_seed(seed, index));
  const data::Sample& s = d.samples[index];
  const pipeline::Estimate e = pipeline::estimate(m.ck.net, m.ck.schedule, d.canonical, s.raw, d.info.camera, rng,
                                                  estimate_config(rc, m, do_refine, derive_seed(seed, index)));
  io::export_mesh(e.final_mesh(), out.string());
  json summary = {{"sample", index},
                  {"mesh", out.string()},
                  {"refine", refine},
                  {"seconds", e.seconds},
                  {"chamfer", metrics::chamfer(e.final_mesh(), s.mesh)},
                  {"chamfer_unit", "m^2"}};
  if (e.refined) summary["chamfer_raw"] = metrics::chamfer(e.placed, s.mesh);
  stdout_ << summary.dump() << '\n';
  return kExitOk;
}

inline int eval(RunConfig rc, const fs::path& model_path, const fs::path& data_dir, const std::string& refine,
                const fs::path& report_path, const std::optional<int>& steps, std::ostream& log) {
  const bool do_refine = parse_refine(refine);
  const Model m = load_model(model_path, steps);
  const data::Dataset d = data::read_dataset(data_dir);
  check_compatible(m, d);
  require(!d.samples.empty(), ErrorKind::kInvalidArgument, "dataset has no samples: " + data_dir.string());
  const auto seed = rc.values.at("infer").at("seed").get<std::uint64_t>();
  const std::size_t n = d.samples.size();
  std::vector<metrics::SampleMetrics> per(n);
  std::vector<double> baseline(n);
  log << "evaluating " << n << " samples, refine=" << refine << '\n';
  parallel_for(n, rc.jobs(), [&](std::size_t i) {
    const data::Sample& s = d.samples[i];
    Rng rng(derive_seed(seed, i));
    const pipeline::Estimate e = pipeline::estimate(m.ck.net, m.ck.schedule, d.canonical, s.raw, d.info.camera, rng,
                                                    estimate_config(rc, m, do_refine, derive_seed(seed, i)));
    metrics::SampleMetrics& r = per[i];
    r.seconds = e.seconds;
    r.chamfer = metrics::chamfer(e.final_mesh(), s.mesh);
    if (e.refined) r.chamfer_raw = metrics::chamfer(e.placed, s.mesh);
    r.ssim = metrics::ssim(e.map, s.tmap);
    baseline[i] = metrics::chamfer(pipeline::placed_flat_baseline(d.canonical, s.raw, d.info.camera), s.mesh);
  });
  metrics::EvalReport report;
  report.label = "eval refine=" + refine;
  rc.values["infer"]["refine"] = refine;
  report.config = {{"run", rc.values}, {"model", m.ck.config}, {"infer_steps", m.infer_steps}};
  report.per_sample = std::move(per);
  report.finalize();
  json j = report.to_json();
  double b = 0.0;
  for (double v : baseline) b += v;
  j["mean_chamfer_flat_baseline"] = b / static_cast<double>(n);
  write_json(report_path, j);
  log << "mean chamfer " << report.mean_chamfer;
  if (report.mean_chamfer_raw) log << " (raw " << *report.mean_chamfer_raw << ")";
  log << ", flat baseline " << b / static_cast<double>(n) << ", " << report.mean_seconds << " s per state\n";
  return kExitOk;
}

inline int register_points(const RunConfig& rc, const std::string& method, const fs::path& src, const fs::path& dst,
                           const fs::path& out) {
  const Eigen::MatrixXd y = read_points(src), x = read_points(dst);
  json j = {{"method", method}, {"src", src.string()}, {"dst", dst.string()}};
  if (method == "icp2d") {
    require(y.cols() >= 2 && x.cols() >= 2, ErrorKind::kShape, "icp2d needs at least two coordinates per point");
    const registration::IcpResult r = registration::icp_2d(y.leftCols(2), x.leftCols(2));
    j["angle"] = r.transform.angle();
    j["rotation"] = matrix_json(r.transform.R);
    j["translation"] = {r.transform.t.x(), r.transform.t.y()};
    j["residual"] = r.residual;
    j["iterations"] = r.iterations;
  } else {
    const registration::RegistrationConfig cfg = rc.refinement(0).registration;
    const registration::RegResult r =
        method == "cpd" ? registration::cpd_nonrigid(x, y, cfg) : registration::spr_nonrigid(x, y, cfg);
    j["sigma2"] = r.sigma2;
    j["beta"] = r.beta;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["objective"] = r.objective;
    j["aligned"] = matrix_json(r.aligned);
  }
  j["config"] = rc.values;
  write_json(out, j);
  return kExitOk;
}

inline int viz(const std::optional<fs::path>& mesh, const std::optional<fs::path>& map, const fs::path& out) {
  if (mesh.has_value() == map.has_value()) throw UsageError("viz needs exactly one of --mesh or --map");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (mesh) {
    io::render_preview(io::import_mesh(mesh->string()), out.string());
  } else {
    const io::PnmImage img = io::read_pnm(map->string());
    require(img.channels == 3 && img.maxval == 255, ErrorKind::kFormat, "translation map must be an 8-bit PPM");
    data::TranslationMap t(img.rows, img.cols);
    for (std::size_t k = 0; k < img.samples.size(); ++k) t.levels[k] = static_cast<std::uint8_t>(img.samples[k]);
    io::render_preview(t, out.string());
  }
  return kExitOk;
}

}  // namespace detail

/// Runs one command line (without the program name). Results go to files or
/// `out`; progress and errors go to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cloth state estimation from depth images with a conditional diffusion model"};
  app.require_subcommand(1);
  std::string config_file;
  std::optional<int> jobs;
  app.add_option("--config", config_file, "JSON file layered over the defaults")->check(CLI::ExistingFile);
  app.add_option("--jobs", jobs, "worker threads for gen-data and eval (1 = serial)")->check(CLI::PositiveNumber);
  app.fallthrough();

  json flags = json::object();
  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& section, const std::string& key,
                  const std::string& help, const std::string& type = "NUMBER") {
    sub->add_option_function<std::string>(
        flag,
        [&flags, section, key](const std::string& v) {
          json parsed;
          try {
            parsed = json::parse(v);
          } catch (const json::parse_error&) {
            parsed = v;
          }
          flags[section][key] = parsed;
        },
        help)
        ->type_name(type);
  };

  fs::path out_dir, data_dir, out_path, model_path, src, dst, report_path;
  std::string sample, refine = "none", method;
  std::optional<int> steps;
  std::optional<fs::path> mesh_in, map_in;

  CLI::App* gen = app.add_subcommand("gen-data", "simulate pick-and-place episodes and write a dataset");
  gen->add_option("--out", out_dir, "dataset directory")->required();
  bind(gen, "--episodes", "data", "episodes", "number of episodes");
  bind(gen, "--actions", "data", "actions", "recorded actions per episode");
  bind(gen, "--grid", "data", "grid", "vertices per cloth side");
  bind(gen, "--img", "data", "img", "model input image size");
  bind(gen, "--seed", "data", "seed", "master seed");

  CLI::App* tr = app.add_subcommand("train", "train the denoiser on a dataset");
  tr->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out_path, "checkpoint path")->required();
  bind(tr, "--epochs", "train", "epochs", "training epochs");
  bind(tr, "--batch", "train", "batch", "batch size");
  bind(tr, "--train-steps", "train", "train_steps", "diffusion steps used in training");
  bind(tr, "--infer-steps", "train", "infer_steps", "strided steps used at inference");
  bind(tr, "--lr", "train", "lr", "Adam learning rate");
  bind(tr, "--seed", "train", "seed", "initialisation and shuffling seed");
  bind(tr, "--profile", "model", "profile", "network size: toy or full", "TEXT");

  CLI::App* inf = app.add_subcommand("infer", "estimate the mesh of one dataset sample");
  inf->add_option("--model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--sample", sample, "DIR/index")->required();
  inf->add_option("--out", out_path, "output PLY")->required();
  inf->add_option("--refine", refine, "none or spr");
  inf->add_option("--infer-steps", steps, "override the checkpoint's inference steps");
  bind(inf, "--seed", "infer", "seed", "sampling seed");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--refine", refine, "none or spr");
  ev->add_option("--report", report_path, "output JSON report")->required();
  ev->add_option("--infer-steps", steps, "override the checkpoint's inference steps");
  bind(ev, "--seed", "infer", "seed", "sampling seed");

  CLI::App* reg = app.add_subcommand("register", "register two point sets");
  reg->add_option("--method", method, "cpd, spr or icp2d")->required()->check(CLI::IsMember({"cpd", "spr", "icp2d"}));
  reg->add_option("--src", src, "moving point set (PLY or text)")->required()->check(CLI::ExistingFile);
  reg->add_option("--dst", dst, "reference point set (PLY or text)")->required()->check(CLI::ExistingFile);
  reg->add_option("--out", out_path, "output JSON")->required();

  CLI::App* vz = app.add_subcommand("viz", "render a mesh or translation map preview");
  vz->add_option("--mesh", mesh_in, "mesh PLY")->check(CLI::ExistingFile);
  vz->add_option("--map", map_in, "translation map PPM")->check(CLI::ExistingFile);
  vz->add_option("--out", out_path, "output PPM")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
    return kExitUsage;
  }

  try {
    if (jobs) flags["jobs"] = *jobs;
    const RunConfig rc = RunConfig::resolve(config_file, flags);
    if (gen->parsed()) return detail::gen_data(rc, out_dir, err);
    if (tr->parsed()) return detail::train(rc, data_dir, out_path, err);
    if (inf->parsed()) return detail::infer(rc, model_path, sample, out_path, refine, steps, out);
    if (ev->parsed()) return detail::eval(rc, model_path, data_dir, refine, report_path, steps, err);
    if (reg->parsed()) return detail::register_points(rc, method, src, dst, out_path);
    if (vz->parsed()) return detail::viz(mesh_in, map_in, out_path);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc)); }

}  // namespace clothdiff::cli
