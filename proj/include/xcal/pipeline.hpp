#pragma once

#include "xcal/abc.hpp"
#include "xcal/config.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace xcal::pipeline {

/// Process exit status for an error code: 1 usage, 2 I/O or artifact,
/// 3 inference failure, 4 provenance mismatch.
int exit_code(ErrorCode code);

enum class Slice { Holdout, Full, Calibration };
Slice parse_slice(const std::string& name);
std::string to_string(Slice slice);

/// Simulated cycles, in the order they are written.
inline const std::vector<std::string> kCycles{"transient", "steady"};

// File layout under the configured directories.
std::filesystem::path training_path(const RunConfig& cfg);
std::filesystem::path dataset_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path ground_truth_path(const RunConfig& cfg);
std::filesystem::path model_path(const RunConfig& cfg);
std::filesystem::path posterior_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path marginal_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path prediction_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path baseline_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path report_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);
std::filesystem::path cumulative_path(const RunConfig& cfg, const std::string& engine, const std::string& cycle);

/// Synthetic generator settings for one engine on one cycle. Every engine on a
/// cycle shares the latent inputs and the process-noise realization.
synth::SynthConfig engine_synth_config(const RunConfig& cfg, const SimulatedEngine& engine, const std::string& cycle);

/// Nominal training set, nominal and sample-engine cycles, ground truth.
/// Returns the written files.
std::vector<std::filesystem::path> simulate(const RunConfig& cfg);

/// Fits the surrogate on the nominal training set and writes the model artifact.
std::filesystem::path train(const RunConfig& cfg);

struct CalibrateOptions {
  std::optional<double> epsilon;  // skips the pilot phase
};

/// Runs ABC for one engine on the calibration window named after `cycle`.
abc::PosteriorSampleSet calibrate(const RunConfig& cfg, const std::string& engine, const std::string& cycle,
                                  const CalibrateOptions& options = {});

/// Writes calibrated and baseline (zero-bias, noise-free) band CSVs.
/// Throws ProvenanceMismatch when the posterior was built from another model.
void predict(const RunConfig& cfg, const std::string& engine, const std::string& cycle, Slice slice = Slice::Holdout);

struct Report {
  abc::EvaluationReport calibrated;
  std::optional<abc::EvaluationReport> baseline;
};

/// Metrics for a predictions CSV, optionally against a baseline CSV.
Report evaluate_files(const std::filesystem::path& predictions, const std::optional<std::filesystem::path>& baseline,
                      double dt);
std::string report_json(const Report& report);
/// time_s, cumulative observed / median / lo95 / hi95 (and baseline median when present).
std::string cumulative_csv(const abc::BandSummary& band, const Report& report);

/// Evaluates the predict outputs of one engine and writes report + plot data.
Report evaluate(const RunConfig& cfg, const std::string& engine, const std::string& cycle);

/// Engine ids of the simulated sample engines.
std::vector<std::string> engine_ids(const RunConfig& cfg);

}  // namespace xcal::pipeline
