#include "xcal/synth.hpp"

#include "xcal/rng.hpp"

#include <algorithm>
#include <cmath>

namespace xcal::synth {

namespace {

constexpr std::uint64_t kSignalStream = 101;
constexpr std::uint64_t kStepStream = 102;
constexpr std::uint64_t kNoiseStream = 103;

constexpr ChannelRange kRanges[kCoreChannels] = {
    {800.0, 2200.0},  // speed
    {10.0, 150.0},    // fuel
    {200.0, 900.0},   // air_flow
    {20.0, 60.0},     // intake_temp
    {14.0, 20.0},     // o2
};

double to_physical(Eigen::Index channel, double unit) {
  const auto r = channel_range(channel);
  return r.lo + 0.5 * (unit + 1.0) * (r.hi - r.lo);
}

Eigen::Index sample_count(const SynthConfig& cfg) {
  return static_cast<Eigen::Index>(std::llround(cfg.duration_s * cfg.sample_rate_hz)) + 1;
}

// Low-pass filtered noise squashed into [-1, 1].
Vector band_limited(Eigen::Index T, double tau_samples, CounterRng rng) {
  const double a = std::exp(-1.0 / tau_samples);
  Vector out(T);
  // Burn-in so the start is already stationary.
  const Eigen::Index burn = static_cast<Eigen::Index>(5.0 * tau_samples);
  double s1 = 0.0;
  double s2 = 0.0;
  for (Eigen::Index t = -burn; t < T; ++t) {
    s1 = a * s1 + (1.0 - a) * rng.normal();
    s2 = a * s2 + (1.0 - a) * s1;
    if (t >= 0) out(t) = s2;
  }
  const double mean = out.mean();
  const double sd = std::sqrt((out.array() - mean).square().mean());
  if (sd > 0.0) out = ((out.array() - mean) / sd).matrix();
  return out.unaryExpr([](double z) { return std::tanh(0.8 * z); });
}

RowMatrix transient_units(Eigen::Index T, Eigen::Index d, double rate, std::uint64_t seed) {
  RowMatrix u(T, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    // Channel time constants between 4 and 10 s.
    const double tau = (4.0 + 1.5 * static_cast<double>(j % 5)) * rate;
    u.col(j) = band_limited(T, tau, CounterRng::substream(seed, kSignalStream, static_cast<std::uint64_t>(j)));
  }
  return u;
}

RowMatrix steady_units(Eigen::Index T, Eigen::Index d, double rate, std::uint64_t seed) {
  RowMatrix u(T, d);
  CounterRng rng = CounterRng::substream(seed, kStepStream, 0);
  Eigen::Index t = 0;
  while (t < T) {
    const auto dwell = static_cast<Eigen::Index>(std::llround(rng.uniform(50.0, 110.0) * rate));
    Eigen::RowVectorXd level(d);
    for (Eigen::Index j = 0; j < d; ++j) level(j) = rng.uniform(-0.9, 0.9);
    const Eigen::Index end = std::min(T, t + std::max<Eigen::Index>(dwell, 1));
    for (; t < end; ++t) u.row(t) = level;
  }
  return u;
}

}  // namespace

CycleKind parse_cycle(const std::string& name) {
  if (name == "transient") return CycleKind::Transient;
  if (name == "steady") return CycleKind::Steady;
  if (name == "mixed") return CycleKind::Mixed;
  throw Error(ErrorCode::InvalidConfig, "unknown cycle kind '" + name + "'");
}

std::string to_string(CycleKind kind) {
  switch (kind) {
    case CycleKind::Transient: return "transient";
    case CycleKind::Steady: return "steady";
    case CycleKind::Mixed: return "mixed";
  }
  return "transient";
}

Schema default_schema(Eigen::Index extra_channels) {
  Schema s;
  s.channels = {
      {"engine_speed", ChannelRole::Control, "rpm"},
      {"fuel_quantity", ChannelRole::Control, "mg/stroke"},
      {"air_flow", ChannelRole::Measured, "kg/h"},
      {"intake_temp", ChannelRole::Measured, "degC"},
      {"o2_concentration", ChannelRole::Measured, "%"},
  };
  for (Eigen::Index k = 0; k < extra_channels; ++k) {
    s.channels.push_back({"aux_" + std::to_string(k), ChannelRole::Control, "1"});
  }
  return s;
}

ChannelRange channel_range(Eigen::Index channel) {
  if (channel < kCoreChannels) return kRanges[channel];
  return {0.0, 1.0};
}

void SynthConfig::validate() const {
  if (d < kCoreChannels) throw Error(ErrorCode::InvalidConfig, "synthetic engines need at least 5 channels");
  if (static_cast<Eigen::Index>(mask.size()) != d) throw Error(ErrorCode::InvalidConfig, "mask length must equal d");
  const auto measured = std::count(mask.begin(), mask.end(), true);
  if (true_b.size() != 0 && true_b.size() != measured) {
    throw Error(ErrorCode::InvalidConfig, "true_b needs one entry per measured channel");
  }
  if (!(duration_s >= 60.0)) throw Error(ErrorCode::InvalidConfig, "duration must be at least 60 s");
  if (!(sample_rate_hz > 0.0)) throw Error(ErrorCode::InvalidConfig, "sample rate must be positive");
  if (!(process_noise_std >= 0.0)) throw Error(ErrorCode::InvalidConfig, "process noise must be >= 0");
  if (!std::isfinite(true_alpha) || !true_b.allFinite()) throw Error(ErrorCode::InvalidConfig, "non-finite biases");
}

double nox_response(const RowMatrix& history) {
  if (history.rows() != kMemory || history.cols() < kCoreChannels) {
    throw Error(ErrorCode::DimensionMismatch, "response needs 5 rows of at least 5 channels");
  }
  auto load = [&](Eigen::Index lag) { return (history(kMemory - 1 - lag, 1) - 10.0) / 140.0; };
  const Eigen::Index now = kMemory - 1;
  const double f = load(0);
  const double L = std::max(0.0, 0.35 * load(0) + 0.25 * load(1) + 0.18 * load(2) + 0.12 * load(3) + 0.10 * load(4));
  const double s = (history(now, 0) - 800.0) / 1400.0;
  const double ua = (history(now, 2) - 550.0) / 350.0;
  const double ut = (history(now, 3) - 40.0) / 20.0;
  const double uo = 0.6 * (history(now, 4) - 17.0) / 3.0 + 0.4 * (history(now - 2, 4) - 17.0) / 3.0;

  const double base = 150.0 + 700.0 * L * (0.85 + 0.3 * s);
  return base * (1.0 + 0.4 * std::tanh(uo)) + 300.0 * L * L * (1.0 + std::tanh(1.5 * ut)) +
         250.0 * (1.0 - L) * (1.0 - std::tanh(1.5 * ua)) + 40.0 * (f - load(4));
}

Vector nox_response_sequence(const RowMatrix& latent) {
  const Eigen::Index T = latent.rows();
  Vector out(T);
  RowMatrix history(kMemory, latent.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < kMemory; ++k) {
      history.row(k) = latent.row(std::max<Eigen::Index>(0, t - (kMemory - 1) + k));
    }
    out(t) = nox_response(history);
  }
  return out;
}

RowMatrix generate_latent_inputs(const SynthConfig& cfg) {
  cfg.validate();
  const Eigen::Index T = sample_count(cfg);
  RowMatrix units;
  switch (cfg.cycle) {
    case CycleKind::Transient:
      units = transient_units(T, cfg.d, cfg.sample_rate_hz, cfg.seed);
      break;
    case CycleKind::Steady:
      units = steady_units(T, cfg.d, cfg.sample_rate_hz, cfg.seed);
      break;
    case CycleKind::Mixed: {
      const Eigen::Index first = (3 * T) / 5;
      units.resize(T, cfg.d);
      units.topRows(first) = transient_units(first, cfg.d, cfg.sample_rate_hz, cfg.seed);
      units.bottomRows(T - first) = steady_units(T - first, cfg.d, cfg.sample_rate_hz, mix64(cfg.seed));
      break;
    }
  }
  RowMatrix x(T, cfg.d);
  for (Eigen::Index j = 0; j < cfg.d; ++j) {
    for (Eigen::Index t = 0; t < T; ++t) x(t, j) = to_physical(j, units(t, j));
  }
  return x;
}

EngineDataset generate_nominal(const SynthConfig& cfg) {
  SynthConfig unbiased = cfg;
  unbiased.true_alpha = 0.0;
  unbiased.true_b = Vector();
  return generate_sample_engine(unbiased);
}

EngineDataset generate_sample_engine(const SynthConfig& cfg) {
  const RowMatrix latent = generate_latent_inputs(cfg);
  const Eigen::Index T = latent.rows();
  const SelectionMatrix sel(cfg.mask);

  EngineDataset ds;
  ds.engine_id = cfg.engine_id;
  ds.cycle_id = to_string(cfg.cycle);
  ds.time = Vector::LinSpaced(T, 0.0, static_cast<double>(T - 1)) / cfg.sample_rate_hz;
  ds.inputs = latent;
  if (cfg.true_b.size() > 0) {
    const Eigen::RowVectorXd shift = sel.embed(cfg.true_b).transpose();
    ds.inputs.rowwise() += shift;
  }
  ds.nox = nox_response_sequence(latent);
  ds.nox.array() += cfg.true_alpha;
  CounterRng noise = CounterRng::substream(cfg.noise_seed.value_or(cfg.seed), kNoiseStream, 0);
  if (cfg.process_noise_std > 0.0) {
    for (Eigen::Index t = 0; t < T; ++t) ds.nox(t) += cfg.process_noise_std * noise.normal();
  }
  return ds;
}

Vector identifiability_ratios(const RowMatrix& latent, const SelectionMatrix& sel, const Vector& half_widths,
                              double process_noise_std) {
  if (half_widths.size() != sel.d_nc()) throw Error(ErrorCode::DimensionMismatch, "one half-width per measured channel");
  const Vector reference = nox_response_sequence(latent);
  Vector ratios(sel.d_nc());
  for (Eigen::Index k = 0; k < sel.d_nc(); ++k) {
    RowMatrix shifted = latent;
    shifted.col(sel.measured_indices()[static_cast<std::size_t>(k)]).array() += half_widths(k);
    const double mean_change = (nox_response_sequence(shifted) - reference).cwiseAbs().mean();
    ratios(k) = process_noise_std > 0.0 ? mean_change / process_noise_std : std::numeric_limits<double>::infinity();
  }
  return ratios;
}

}  // namespace xcal::synth
