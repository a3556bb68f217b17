#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clothdiff/core/error.hpp"
#include "clothdiff/data/translation_map.hpp"
#include "clothdiff/metrics/chamfer.hpp"
#include "clothdiff/metrics/ssim.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::metrics {

using nlohmann::json;

struct SampleMetrics {
  double chamfer = 0.0;
  std::optional<double> ssim;
  double seconds = 0.0;
  std::optional<double> chamfer_raw;  // before refinement, when a refinement stage ran
};

struct EvalReport {
  std::string label;
  json config = json::object();
  std::vector<SampleMetrics> per_sample;
  double mean_chamfer = 0.0;
  std::optional<double> mean_ssim;
  double mean_seconds = 0.0;
  std::optional<double> mean_chamfer_raw;

  /// Recomputes the aggregates; an optional mean is present only when every
  /// sample carries the value.
  void finalize() {
    require(!per_sample.empty(), ErrorKind::kInvalidArgument, "evaluation report has no samples");
    const double n = static_cast<double>(per_sample.size());
    double c = 0, t = 0, s = 0, raw = 0;
    bool all_ssim = true, all_raw = true;
    for (const auto& m : per_sample) {
      c += m.chamfer;
      t += m.seconds;
      if (m.ssim) s += *m.ssim; else all_ssim = false;
      if (m.chamfer_raw) raw += *m.chamfer_raw; else all_raw = false;
    }
    mean_chamfer = c / n;
    mean_seconds = t / n;
    mean_ssim = all_ssim ? std::optional<double>(s / n) : std::nullopt;
    mean_chamfer_raw = all_raw ? std::optional<double>(raw / n) : std::nullopt;
  }

  json to_json() const {
    json samples = json::array();
    for (const auto& m : per_sample) {
      json j = {{"chamfer", m.chamfer}, {"seconds", m.seconds}};
      if (m.ssim) j["ssim"] = *m.ssim;
      if (m.chamfer_raw) j["chamfer_raw"] = *m.chamfer_raw;
      samples.push_back(std::move(j));
    }
    json j = {{"label", label},
              {"config", config},
              {"n", per_sample.size()},
              {"chamfer_unit", "m^2"},
              {"per_sample", samples},
              {"mean_chamfer", mean_chamfer},
              {"mean_seconds", mean_seconds}};
    if (mean_ssim) j["mean_ssim"] = *mean_ssim;
    if (mean_chamfer_raw) j["mean_chamfer_raw"] = *mean_chamfer_raw;
    return j;
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    try {
      r.label = j.at("label").get<std::string>();
      r.config = j.value("config", json::object());
      for (const auto& s : j.at("per_sample")) {
        SampleMetrics m;
        m.chamfer = s.at("chamfer").get<double>();
        m.seconds = s.at("seconds").get<double>();
        if (s.contains("ssim")) m.ssim = s["ssim"].get<double>();
        if (s.contains("chamfer_raw")) m.chamfer_raw = s["chamfer_raw"].get<double>();
        r.per_sample.push_back(m);
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, std::string("malformed evaluation report: ") + e.what());
    }
    r.finalize();
    return r;
  }
};

/// Per-sample Chamfer (and SSIM when maps are given as (prediction, truth)
/// pairs) with aggregates.
inline EvalReport evaluate_run(const std::vector<ClothMesh>& predictions, const std::vector<ClothMesh>& ground_truths,
                               const std::vector<double>& seconds, std::string label, json config = json::object(),
                               const std::vector<std::pair<data::TranslationMap, data::TranslationMap>>& maps = {}) {
  require(predictions.size() == ground_truths.size() && predictions.size() == seconds.size(), ErrorKind::kShape,
          "predictions, ground truths and timings differ in length");
  require(maps.empty() || maps.size() == predictions.size(), ErrorKind::kShape,
          "translation maps do not line up with the predictions");
  EvalReport r;
  r.label = std::move(label);
  r.config = std::move(config);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    SampleMetrics m;
    m.chamfer = chamfer(predictions[i], ground_truths[i]);
    m.seconds = seconds[i];
    if (!maps.empty()) m.ssim = ssim(maps[i].first, maps[i].second);
    r.per_sample.push_back(m);
  }
  r.finalize();
  return r;
}

}  // namespace clothdiff::metrics
