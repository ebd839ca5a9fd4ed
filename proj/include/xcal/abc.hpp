#pragma once

#include "xcal/data.hpp"
#include "xcal/gp.hpp"
#include "xcal/rng.hpp"
#include "xcal/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xcal::abc {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

/// Output bias alpha plus one input bias per measured channel, physical units.
struct BiasParameters {
  double alpha = 0.0;
  Vector b;
};

/// Independent uniform priors on alpha and on each entry of b.
struct PriorSpec {
  Interval alpha;
  std::vector<Interval> b;

  /// lo <= hi everywhere (a zero-width interval pins the parameter) and one
  /// interval per measured channel.
  void validate(Eigen::Index d_nc) const;
  bool degenerate() const;
  BiasParameters median() const;
  BiasParameters sample(CounterRng& rng) const;
};

struct AbcConfig {
  std::size_t n_pilot = 1000;
  std::size_t n_main = 10000;
  std::size_t n_desired = 500;
  double zeta = 0.05;
  double sigma_y = 0.0;  // observation noise std, physical NOx units
  std::uint64_t seed = 0;
  // 0 = hardware concurrency capped by XCAL_THREADS; 1 = sequential.
  unsigned threads = 0;

  void validate() const;
};

/// Worker count for `requested` (see AbcConfig::threads).
unsigned resolve_threads(unsigned requested);

struct Provenance {
  std::string config_hash;
  std::string model_hash;
  std::uint64_t seed = 0;
};

struct PosteriorSampleSet {
  std::vector<BiasParameters> samples;
  std::vector<double> distances;
  std::vector<std::uint64_t> draw_indices;
  double epsilon = 0.0;
  double acceptance_rate = 0.0;
  std::size_t attempted = 0;
  std::string engine_id;
  Provenance provenance;
};

/// Per-timestep median and central 95% band.
struct BandSummary {
  Vector time;
  Vector median;
  Vector lo95;
  Vector hi95;
};

struct PredictiveEnsemble {
  Matrix samples;  // N_acc x T*
  BandSummary summary;
};

/// Sequence-level simulator for one engine dataset: y_t = g(window(x - S b)_t) + alpha + sigma_y z_t.
class Simulator {
 public:
  Simulator(const EngineDataset& ds, const gp::GpModel& model, SelectionMatrix sel);

  Eigen::Index length() const { return length_; }
  /// Observed NOx aligned with the simulated trajectory (window ends).
  Vector observed() const;
  Vector times() const;
  /// Noise-free trajectory g(window(x - S b)) + alpha.
  Vector deterministic(const BiasParameters& theta) const;
  Vector simulate(const BiasParameters& theta, double sigma_y, CounterRng& rng) const;
  const SelectionMatrix& selection() const { return sel_; }

 private:
  const EngineDataset& ds_;
  const gp::GpModel& model_;
  SelectionMatrix sel_;
  Eigen::Index length_;
};

Vector simulate_trajectory(const BiasParameters& theta, const EngineDataset& ds, const gp::GpModel& model,
                           const SelectionMatrix& sel, double sigma_y, CounterRng& rng);

// Substream identifiers; each phase draws from its own family of streams.
inline constexpr std::uint64_t kPilotStream = 1;
inline constexpr std::uint64_t kMainStream = 2;
inline constexpr std::uint64_t kPredictiveStream = 3;

/// Prior draw and KS distance of draw `index` in stream `stream`.
struct Draw {
  BiasParameters theta;
  double distance = 0.0;
};

struct PilotResult {
  double epsilon = 0.0;
  Vector distances;
};

PilotResult pilot_phase(const EngineDataset& calibration, const gp::GpModel& model, const SelectionMatrix& sel,
                        const PriorSpec& prior, const AbcConfig& cfg);

PosteriorSampleSet main_phase(const EngineDataset& calibration, const gp::GpModel& model, const SelectionMatrix& sel,
                              const PriorSpec& prior, const AbcConfig& cfg, double epsilon);

/// One trajectory per accepted sample on `ds_new`, summarized per timestep.
PredictiveEnsemble posterior_predictive(const PosteriorSampleSet& set, const EngineDataset& ds_new,
                                        const gp::GpModel& model, const SelectionMatrix& sel, double sigma_y,
                                        std::uint64_t seed);

/// Median and 2.5 / 97.5 percentiles of each column.
BandSummary summarize(const Matrix& samples, const Vector& time);

struct EvaluationReport {
  double rmse = 0.0;
  double p90 = 0.0;
  double p95 = 0.0;
  double p98 = 0.0;
  double coverage95 = 0.0;
  Vector cumulative_median;
  Vector cumulative_lo95;
  Vector cumulative_hi95;
  Vector cumulative_observed;
};

EvaluationReport evaluate(const BandSummary& band, const Vector& observed, double dt = 1.0);
EvaluationReport evaluate(const PredictiveEnsemble& ensemble, const Vector& observed, double dt = 1.0);

/// JSON artifact; `config_echo_json` is embedded verbatim as the "config" object.
std::string posterior_to_json(const PosteriorSampleSet& set, const std::string& config_echo_json = "{}");
PosteriorSampleSet posterior_from_json(const std::string& text);

/// parameter,prior_q05,prior_q50,prior_q95,posterior_q05,posterior_q50,posterior_q95
std::string marginal_summary_csv(const PosteriorSampleSet& set, const PriorSpec& prior,
                                 const std::vector<std::string>& b_names);

/// time_s,median,lo95,hi95,observed
std::string band_csv(const BandSummary& band, const Vector& observed);
struct BandTable {
  BandSummary band;
  Vector observed;
};
BandTable read_band_csv(const std::filesystem::path& path);

}  // namespace xcal::abc
