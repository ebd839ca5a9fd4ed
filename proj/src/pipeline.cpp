#include "xcal/pipeline.hpp"

#include "xcal/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xcal::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kIdentifiabilityRatio = 3.0;

std::string stem(const std::string& engine, const std::string& cycle) { return engine + "_" + cycle; }

void require_cycle(const std::string& cycle) {
  for (const auto& c : kCycles) {
    if (c == cycle) return;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown cycle '" + cycle + "'");
}

json metrics_json(const abc::EvaluationReport& r) {
  return {{"rmse", r.rmse}, {"p90", r.p90}, {"p95", r.p95}, {"p98", r.p98}, {"coverage95", r.coverage95}};
}

struct LoadedArtifacts {
  std::string model_text;
  gp::GpModel model;
};

LoadedArtifacts load_model(const RunConfig& cfg) {
  LoadedArtifacts out;
  out.model_text = io::read_text(model_path(cfg));
  out.model = gp::deserialize(out.model_text).model;
  return out;
}

EngineDataset load_engine(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  require_cycle(cycle);
  return load_dataset(dataset_path(cfg, engine, cycle), cfg.schema, engine, cycle);
}

/// Rows of `slice` plus the W - 1 preceding rows, so the model predicts every
/// sample of the slice. Near the start of the cycle the history is shortened.
EngineDataset with_history(const RunConfig& cfg, const EngineDataset& ds, const std::string& cycle, Slice slice) {
  if (slice == Slice::Full) return ds;
  const auto& win = cfg.window(cycle);
  const auto split = slice_calibration_window(ds, win.warmup_s, win.length_s);
  const Eigen::Index begin =
      split.warmup_samples + (slice == Slice::Holdout ? split.calibration.length() : Eigen::Index{0});
  const Eigen::Index count = slice == Slice::Holdout ? split.holdout.length() : split.calibration.length();
  const Eigen::Index history =
      std::min(begin, window_samples(cfg.surrogate.window_s, cfg.schema.sample_rate_hz) - 1);
  return slice_rows(ds, begin - history, count + history);
}

}  // namespace

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
      return 1;
    case ErrorCode::FactorizationFailed:
    case ErrorCode::DegeneratePrior:
    case ErrorCode::NoSamplesAccepted:
    case ErrorCode::EmptyPosterior:
      return 3;
    case ErrorCode::ProvenanceMismatch:
      return 4;
    default:
      return 2;
  }
}

Slice parse_slice(const std::string& name) {
  if (name == "holdout") return Slice::Holdout;
  if (name == "full") return Slice::Full;
  if (name == "calibration") return Slice::Calibration;
  throw Error(ErrorCode::InvalidConfig, "slice must be holdout, full or calibration");
}

std::string to_string(Slice slice) {
  switch (slice) {
    case Slice::Holdout: return "holdout";
    case Slice::Full: return "full";
    case Slice::Calibration: return "calibration";
  }
  return "holdout";
}

fs::path training_path(const RunConfig& cfg) { return cfg.data_dir / "nominal_train.csv"; }
fs::path dataset_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.data_dir / (stem(engine, cycle) + ".csv");
}
fs::path ground_truth_path(const RunConfig& cfg) { return cfg.data_dir / "ground_truth.json"; }
fs::path model_path(const RunConfig& cfg) { return cfg.artifact_dir / "model.json"; }
fs::path posterior_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.artifact_dir / ("posterior_" + stem(engine, cycle) + ".json");
}
fs::path marginal_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.report_dir / ("marginals_" + stem(engine, cycle) + ".csv");
}
fs::path prediction_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.artifact_dir / ("prediction_" + stem(engine, cycle) + ".csv");
}
fs::path baseline_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.artifact_dir / ("baseline_" + stem(engine, cycle) + ".csv");
}
fs::path report_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.report_dir / ("report_" + stem(engine, cycle) + ".json");
}
fs::path cumulative_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  return cfg.report_dir / ("cumulative_" + stem(engine, cycle) + ".csv");
}

std::vector<std::string> engine_ids(const RunConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& e : cfg.simulate.engines) ids.push_back(e.id);
  return ids;
}

synth::SynthConfig engine_synth_config(const RunConfig& cfg, const SimulatedEngine& engine, const std::string& cycle) {
  require_cycle(cycle);
  synth::SynthConfig sc;
  sc.d = static_cast<Eigen::Index>(cfg.schema.size());
  sc.mask = cfg.schema.measured_mask();
  sc.sample_rate_hz = cfg.schema.sample_rate_hz;
  sc.process_noise_std = cfg.simulate.process_noise_std;
  sc.engine_id = engine.id;
  if (cycle == "transient") {
    sc.cycle = synth::CycleKind::Transient;
    sc.duration_s = cfg.simulate.transient_duration_s;
    sc.seed = cfg.simulate.transient_seed;
  } else {
    sc.cycle = synth::CycleKind::Steady;
    sc.duration_s = cfg.simulate.steady_duration_s;
    sc.seed = cfg.simulate.steady_seed;
  }
  sc.true_alpha = engine.alpha;
  sc.true_b = engine.b;
  return sc;
}

std::vector<fs::path> simulate(const RunConfig& cfg) {
  cfg.validate();
  const auto sel = cfg.selection();
  std::vector<fs::path> written;

  synth::SynthConfig train_cfg;
  train_cfg.d = static_cast<Eigen::Index>(cfg.schema.size());
  train_cfg.mask = cfg.schema.measured_mask();
  train_cfg.sample_rate_hz = cfg.schema.sample_rate_hz;
  train_cfg.process_noise_std = cfg.simulate.process_noise_std;
  train_cfg.cycle = synth::CycleKind::Mixed;
  train_cfg.duration_s = cfg.simulate.training_duration_s;
  train_cfg.seed = cfg.simulate.training_seed;
  train_cfg.engine_id = "nominal";
  write_dataset(training_path(cfg), synth::generate_nominal(train_cfg), cfg.schema);
  written.push_back(training_path(cfg));

  Vector half_widths(sel.d_nc());
  for (Eigen::Index k = 0; k < sel.d_nc(); ++k) half_widths(k) = 0.5 * cfg.prior.b[static_cast<std::size_t>(k)].width();
  const auto names = cfg.measured_names();

  json truth;
  truth["process_noise_std"] = cfg.simulate.process_noise_std;
  truth["config_hash"] = cfg.hash();
  json ident = json::object();

  const SimulatedEngine nominal{"nominal", 0.0, Vector::Zero(sel.d_nc())};
  for (const auto& cycle : kCycles) {
    const auto nominal_cfg = engine_synth_config(cfg, nominal, cycle);
    const RowMatrix latent = synth::generate_latent_inputs(nominal_cfg);
    const Vector ratios = synth::identifiability_ratios(latent, sel, half_widths, cfg.simulate.process_noise_std);
    json r = json::object();
    for (Eigen::Index k = 0; k < sel.d_nc(); ++k) {
      const auto& name = names[static_cast<std::size_t>(k)];
      if (ratios(k) < kIdentifiabilityRatio) {
        throw Error(ErrorCode::InvalidConfig, "channel '" + name + "' is not identifiable on the " + cycle +
                                                  " cycle (ratio " + io::format_double(ratios(k)) + ")");
      }
      r[name] = std::isfinite(ratios(k)) ? json(ratios(k)) : json("inf");
    }
    ident[cycle] = r;

    write_dataset(dataset_path(cfg, "nominal", cycle), synth::generate_sample_engine(nominal_cfg), cfg.schema);
    written.push_back(dataset_path(cfg, "nominal", cycle));
    for (const auto& e : cfg.simulate.engines) {
      write_dataset(dataset_path(cfg, e.id, cycle), synth::generate_sample_engine(engine_synth_config(cfg, e, cycle)),
                    cfg.schema);
      written.push_back(dataset_path(cfg, e.id, cycle));
    }
  }
  truth["identifiability"] = ident;

  json engines = json::array();
  for (const auto& e : cfg.simulate.engines) {
    json b = json::object();
    for (Eigen::Index k = 0; k < e.b.size(); ++k) b[names[static_cast<std::size_t>(k)]] = e.b(k);
    engines.push_back({{"id", e.id}, {"alpha", e.alpha}, {"b", b}});
  }
  truth["engines"] = engines;
  io::write_text(ground_truth_path(cfg), truth.dump(1) + "\n");
  written.push_back(ground_truth_path(cfg));
  return written;
}

fs::path train(const RunConfig& cfg) {
  cfg.validate();
  const auto nominal = load_dataset(training_path(cfg), cfg.schema, "nominal", "train");
  const auto model = gp::fit_surrogate(nominal, cfg.surrogate, cfg.abc.seed);
  const json provenance = {{"config_hash", cfg.hash()},
                           {"seed", cfg.abc.seed},
                           {"training_data_hash", io::hex64(io::fnv1a(io::read_text(training_path(cfg))))}};
  io::write_text(model_path(cfg), gp::serialize(model, provenance.dump()));
  return model_path(cfg);
}

abc::PosteriorSampleSet calibrate(const RunConfig& cfg, const std::string& engine, const std::string& cycle,
                                  const CalibrateOptions& options) {
  cfg.validate();
  const auto artifacts = load_model(cfg);
  const auto ds = load_engine(cfg, engine, cycle);
  const auto calibration = with_history(cfg, ds, cycle, Slice::Calibration);
  const auto sel = cfg.selection();

  double epsilon = 0.0;
  if (options.epsilon) {
    epsilon = *options.epsilon;
  } else {
    epsilon = abc::pilot_phase(calibration, artifacts.model, sel, cfg.prior, cfg.abc).epsilon;
  }
  auto set = abc::main_phase(calibration, artifacts.model, sel, cfg.prior, cfg.abc, epsilon);
  set.engine_id = engine;
  set.provenance.config_hash = cfg.hash();
  set.provenance.model_hash = io::hex64(io::fnv1a(artifacts.model_text));
  set.provenance.seed = cfg.abc.seed;

  io::write_text(posterior_path(cfg, engine, cycle), abc::posterior_to_json(set, cfg.canonical_json()));
  io::write_text(marginal_path(cfg, engine, cycle), abc::marginal_summary_csv(set, cfg.prior, cfg.measured_names()));
  return set;
}

void predict(const RunConfig& cfg, const std::string& engine, const std::string& cycle, Slice slice) {
  cfg.validate();
  const auto artifacts = load_model(cfg);
  const auto set = abc::posterior_from_json(io::read_text(posterior_path(cfg, engine, cycle)));
  if (set.provenance.model_hash != io::hex64(io::fnv1a(artifacts.model_text))) {
    throw Error(ErrorCode::ProvenanceMismatch, "posterior was calibrated against a different model");
  }
  if (set.engine_id != engine) {
    throw Error(ErrorCode::ProvenanceMismatch, "posterior belongs to engine '" + set.engine_id + "'");
  }
  const auto ds = load_engine(cfg, engine, cycle);
  const auto target = with_history(cfg, ds, cycle, slice);
  const auto sel = cfg.selection();

  const auto ensemble = abc::posterior_predictive(set, target, artifacts.model, sel, cfg.abc.sigma_y, cfg.abc.seed);
  const abc::Simulator sim(target, artifacts.model, sel);
  const Vector observed = sim.observed();
  io::write_text(prediction_path(cfg, engine, cycle), abc::band_csv(ensemble.summary, observed));

  abc::PosteriorSampleSet zero;
  zero.samples.push_back({0.0, Vector::Zero(sel.d_nc())});
  const auto baseline = abc::posterior_predictive(zero, target, artifacts.model, sel, 0.0, cfg.abc.seed);
  io::write_text(baseline_path(cfg, engine, cycle), abc::band_csv(baseline.summary, observed));
}

Report evaluate_files(const fs::path& predictions, const std::optional<fs::path>& baseline, double dt) {
  const auto pred = abc::read_band_csv(predictions);
  Report report;
  report.calibrated = abc::evaluate(pred.band, pred.observed, dt);
  if (baseline) {
    const auto base = abc::read_band_csv(*baseline);
    if (base.observed.size() != pred.observed.size() || base.observed != pred.observed) {
      throw Error(ErrorCode::DimensionMismatch, "baseline and predictions cover different observations");
    }
    report.baseline = abc::evaluate(base.band, base.observed, dt);
  }
  return report;
}

std::string report_json(const Report& report) {
  json j;
  j["calibrated"] = metrics_json(report.calibrated);
  if (report.baseline) {
    j["baseline"] = metrics_json(*report.baseline);
    j["rmse_ratio"] = report.baseline->rmse > 0.0 ? json(report.calibrated.rmse / report.baseline->rmse) : json(nullptr);
  }
  return j.dump(1) + "\n";
}

std::string cumulative_csv(const abc::BandSummary& band, const Report& report) {
  const auto& c = report.calibrated;
  std::ostringstream out;
  out << "time_s,observed,median,lo95,hi95";
  if (report.baseline) out << ",baseline";
  out << '\n';
  for (Eigen::Index t = 0; t < band.time.size(); ++t) {
    out << io::format_double(band.time(t)) << ',' << io::format_double(c.cumulative_observed(t)) << ','
        << io::format_double(c.cumulative_median(t)) << ',' << io::format_double(c.cumulative_lo95(t)) << ','
        << io::format_double(c.cumulative_hi95(t));
    if (report.baseline) out << ',' << io::format_double(report.baseline->cumulative_median(t));
    out << '\n';
  }
  return out.str();
}

Report evaluate(const RunConfig& cfg, const std::string& engine, const std::string& cycle) {
  const double dt = 1.0 / cfg.schema.sample_rate_hz;
  const auto base = baseline_path(cfg, engine, cycle);
  const std::optional<fs::path> baseline = fs::exists(base) ? std::optional<fs::path>(base) : std::nullopt;
  const auto report = evaluate_files(prediction_path(cfg, engine, cycle), baseline, dt);
  io::write_text(report_path(cfg, engine, cycle), report_json(report));
  const auto band = abc::read_band_csv(prediction_path(cfg, engine, cycle)).band;
  io::write_text(cumulative_path(cfg, engine, cycle), cumulative_csv(band, report));
  return report;
}

}  // namespace xcal::pipeline
