#pragma once

#include "xcal/data.hpp"
#include "xcal/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace xcal::synth {

enum class CycleKind {
  Transient,  // smooth band-limited signals (FTP-like)
  Steady,     // piecewise-constant operating points (SET-like)
  Mixed,      // transient followed by steady steps; broad coverage for training
};

CycleKind parse_cycle(const std::string& name);
std::string to_string(CycleKind kind);

/// The first five channels drive the response; extra channels are nuisance inputs.
inline constexpr Eigen::Index kCoreChannels = 5;
/// Samples of history the response depends on (current sample included).
inline constexpr Eigen::Index kMemory = 5;

/// speed [rpm], fuel [mg/stroke], air_flow [kg/h], intake_temp [degC], o2 [%]; the
/// last three are measured (sensor) channels.
Schema default_schema(Eigen::Index extra_channels = 0);

struct ChannelRange {
  double lo;
  double hi;
};
ChannelRange channel_range(Eigen::Index channel);

struct SynthConfig {
  Eigen::Index d = kCoreChannels;
  std::vector<bool> mask{false, false, true, true, true};
  CycleKind cycle = CycleKind::Transient;
  double duration_s = 1200.0;
  double sample_rate_hz = 1.0;
  std::uint64_t seed = 1;
  // Seed for the NOx process noise; defaults to `seed`.
  std::optional<std::uint64_t> noise_seed;
  double true_alpha = 0.0;
  Vector true_b;  // one entry per measured channel; empty means zero
  double process_noise_std = 5.0;
  std::string engine_id = "nominal";

  void validate() const;
};

/// NOx [ppm] from the last kMemory latent input rows, oldest first (row kMemory - 1
/// is the current sample).
///
/// With load f = (fuel - 10) / 140, speed s = (speed - 800) / 1400 and centred
/// sensor channels ua = (air - 550) / 350, ut = (temp - 40) / 20, uo = (o2 - 17) / 3:
///   L    = max(0, 0.35 f_t + 0.25 f_{t-1} + 0.18 f_{t-2} + 0.12 f_{t-3} + 0.10 f_{t-4})
///   base = 150 + 700 L (0.85 + 0.3 s_t)
///   NOx  = base (1 + 0.4 tanh(0.6 uo_t + 0.4 uo_{t-2}))
///          + 300 L^2 (1 + tanh(1.5 ut_t))
///          + 250 (1 - L) (1 - tanh(1.5 ua_t))
///          + 40 (f_t - f_{t-4})
/// Oxygen scales the whole response, intake temperature mostly moves the
/// high-load tail and air flow the low-load part.
double nox_response(const RowMatrix& history);

/// Response at every sample of a latent input sequence; the first rows reuse the
/// earliest sample as history.
Vector nox_response_sequence(const RowMatrix& latent);

/// Latent (true physical) inputs of a cycle, T = duration * rate + 1 samples.
RowMatrix generate_latent_inputs(const SynthConfig& cfg);

/// Unbiased engine: recorded inputs are the latent inputs, nox = h + noise.
EngineDataset generate_nominal(const SynthConfig& cfg);

/// Biased engine: sensors read latent + S b*, nox = h(latent) + alpha* + noise.
EngineDataset generate_sample_engine(const SynthConfig& cfg);

/// For each measured channel, mean |h(x + delta_k e_k) - h(x)| over the cycle
/// divided by the process noise std.
Vector identifiability_ratios(const RowMatrix& latent, const SelectionMatrix& sel, const Vector& half_widths,
                              double process_noise_std);

}  // namespace xcal::synth
