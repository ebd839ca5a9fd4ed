#pragma once

#include "xcal/abc.hpp"
#include "xcal/data.hpp"
#include "xcal/gp.hpp"
#include "xcal/synth.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace xcal {

struct CalibrationWindow {
  double warmup_s = 0.0;
  double length_s = 0.0;
};

struct SimulatedEngine {
  std::string id;
  double alpha = 0.0;
  Vector b;
};

struct SimulationSettings {
  double training_duration_s = 4000.0;
  double transient_duration_s = 1200.0;
  double steady_duration_s = 1300.0;
  double process_noise_std = 5.0;
  std::uint64_t training_seed = 11;
  std::uint64_t transient_seed = 21;
  std::uint64_t steady_seed = 31;
  std::vector<SimulatedEngine> engines;
};

/// Everything a pipeline run needs, read from one JSON file.
struct RunConfig {
  Schema schema;
  gp::SurrogateConfig surrogate;
  abc::PriorSpec prior;
  abc::AbcConfig abc;
  std::map<std::string, CalibrationWindow> windows;
  SimulationSettings simulate;
  std::filesystem::path data_dir = "data";
  std::filesystem::path artifact_dir = "artifacts";
  std::filesystem::path report_dir = "reports";

  /// Canonical JSON of the effective configuration (paths excluded).
  std::string canonical_json() const;
  std::string hash() const;
  SelectionMatrix selection() const { return SelectionMatrix(schema.measured_mask()); }
  std::vector<std::string> measured_names() const;
  const CalibrationWindow& window(const std::string& name) const;

  /// Checks every cross-module invariant; throws InvalidConfig.
  void validate() const;
};

/// Parses JSON config text. Relative paths resolve against `base_dir`.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

/// Defaults for the built-in synthetic study: 1 nominal + 3 sample engines.
std::string default_config_json();

}  // namespace xcal
