#include "xcal/abc.hpp"

#include "xcal/io.hpp"
#include "xcal/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace xcal::abc {

using json = nlohmann::json;

void PriorSpec::validate(Eigen::Index d_nc) const {
  auto check = [](const Interval& iv, const std::string& what) {
    if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.lo > iv.hi) {
      throw Error(ErrorCode::InvalidConfig, "prior bounds for " + what + " must be finite with lo <= hi");
    }
  };
  check(alpha, "alpha");
  if (static_cast<Eigen::Index>(b.size()) != d_nc) {
    throw Error(ErrorCode::DimensionMismatch, "prior has " + std::to_string(b.size()) +
                                                  " sensor-bias intervals, expected " + std::to_string(d_nc));
  }
  for (std::size_t k = 0; k < b.size(); ++k) check(b[k], "b[" + std::to_string(k) + "]");
}

bool PriorSpec::degenerate() const {
  return alpha.width() == 0.0 && std::all_of(b.begin(), b.end(), [](const Interval& iv) { return iv.width() == 0.0; });
}

BiasParameters PriorSpec::median() const {
  BiasParameters p;
  p.alpha = alpha.mid();
  p.b.resize(static_cast<Eigen::Index>(b.size()));
  for (std::size_t k = 0; k < b.size(); ++k) p.b(static_cast<Eigen::Index>(k)) = b[k].mid();
  return p;
}

BiasParameters PriorSpec::sample(CounterRng& rng) const {
  BiasParameters p;
  p.alpha = rng.uniform(alpha.lo, alpha.hi);
  p.b.resize(static_cast<Eigen::Index>(b.size()));
  for (std::size_t k = 0; k < b.size(); ++k) p.b(static_cast<Eigen::Index>(k)) = rng.uniform(b[k].lo, b[k].hi);
  return p;
}

void AbcConfig::validate() const {
  if (n_pilot < 1) throw Error(ErrorCode::InvalidConfig, "n_pilot must be positive");
  if (n_desired < 1 || n_desired > n_main) throw Error(ErrorCode::InvalidConfig, "need 1 <= n_desired <= n_main");
  if (!(zeta > 0.0 && zeta < 1.0)) throw Error(ErrorCode::InvalidConfig, "zeta must lie in (0, 1)");
  if (!(sigma_y >= 0.0) || !std::isfinite(sigma_y)) throw Error(ErrorCode::InvalidConfig, "sigma_y must be >= 0");
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("XCAL_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

namespace {

/// Runs fn(i) for i in [begin, end) on up to `threads` workers, contiguous chunks.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, unsigned threads, Fn&& fn) {
  const std::size_t n = end - begin;
  if (threads <= 1 || n < 2) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    pool.emplace_back([&, w, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class DrawEvaluator {
 public:
  DrawEvaluator(const Simulator& sim, const PriorSpec& prior, const AbcConfig& cfg, std::uint64_t stream)
      : sim_(sim), prior_(prior), cfg_(cfg), stream_(stream) {
    const Vector obs = sim.observed();
    obs_sorted_ = stats::sorted_copy(obs);
  }

  Draw operator()(std::uint64_t index) const {
    CounterRng rng = CounterRng::substream(cfg_.seed, stream_, index);
    Draw d;
    d.theta = prior_.sample(rng);
    const Vector y = sim_.simulate(d.theta, cfg_.sigma_y, rng);
    if (!y.allFinite()) throw Error(ErrorCode::NonFiniteValue, "simulated trajectory is not finite");
    const auto sim_sorted = stats::sorted_copy(y);
    d.distance = stats::ks_statistic_sorted<double>(sim_sorted, obs_sorted_);
    return d;
  }

 private:
  const Simulator& sim_;
  const PriorSpec& prior_;
  const AbcConfig& cfg_;
  std::uint64_t stream_;
  std::vector<double> obs_sorted_;
};

void check_inputs(const EngineDataset& ds, const gp::GpModel& model, const SelectionMatrix& sel) {
  if (ds.length() == 0) throw Error(ErrorCode::EmptyDataset, "calibration dataset is empty");
  if (ds.channels() != model.channels() || sel.d() != model.channels()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset, selection and model disagree on the channel count");
  }
}

}  // namespace

Simulator::Simulator(const EngineDataset& ds, const gp::GpModel& model, SelectionMatrix sel)
    : ds_(ds), model_(model), sel_(std::move(sel)) {
  check_inputs(ds, model, sel_);
  if (model.window() > ds.length()) {
    throw Error(ErrorCode::WindowTooLong, "dataset shorter than the model window");
  }
  length_ = ds.length() - model.window() + 1;
}

Vector Simulator::observed() const { return ds_.nox.tail(length_); }
Vector Simulator::times() const { return ds_.time.tail(length_); }

Vector Simulator::deterministic(const BiasParameters& theta) const {
  // Bias acts on the raw channels, before lag-stacking.
  Vector y = model_.median_predict_sequence(apply_bias(ds_.inputs, sel_, theta.b));
  y.array() += theta.alpha;
  return y;
}

Vector Simulator::simulate(const BiasParameters& theta, double sigma_y, CounterRng& rng) const {
  Vector y = deterministic(theta);
  if (sigma_y > 0.0) {
    for (Eigen::Index t = 0; t < y.size(); ++t) y(t) += sigma_y * rng.normal();
  }
  return y;
}

Vector simulate_trajectory(const BiasParameters& theta, const EngineDataset& ds, const gp::GpModel& model,
                           const SelectionMatrix& sel, double sigma_y, CounterRng& rng) {
  return Simulator(ds, model, sel).simulate(theta, sigma_y, rng);
}

PilotResult pilot_phase(const EngineDataset& calibration, const gp::GpModel& model, const SelectionMatrix& sel,
                        const PriorSpec& prior, const AbcConfig& cfg) {
  cfg.validate();
  prior.validate(sel.d_nc());
  const Simulator sim(calibration, model, sel);
  const DrawEvaluator eval(sim, prior, cfg, kPilotStream);

  PilotResult out;
  out.distances.resize(static_cast<Eigen::Index>(cfg.n_pilot));
  parallel_for(0, cfg.n_pilot, resolve_threads(cfg.threads),
               [&](std::size_t i) { out.distances(static_cast<Eigen::Index>(i)) = eval(i).distance; });

  const bool all_equal = (out.distances.array() == out.distances(0)).all();
  if (all_equal && prior.degenerate()) {
    throw Error(ErrorCode::DegeneratePrior, "zero-width prior and identical pilot distances");
  }
  out.epsilon = stats::quantile(out.distances, cfg.zeta);
  return out;
}

PosteriorSampleSet main_phase(const EngineDataset& calibration, const gp::GpModel& model, const SelectionMatrix& sel,
                              const PriorSpec& prior, const AbcConfig& cfg, double epsilon) {
  cfg.validate();
  prior.validate(sel.d_nc());
  if (!std::isfinite(epsilon) || epsilon < 0.0) throw Error(ErrorCode::InvalidConfig, "epsilon must be >= 0");
  const Simulator sim(calibration, model, sel);
  const DrawEvaluator eval(sim, prior, cfg, kMainStream);
  const unsigned threads = resolve_threads(cfg.threads);

  PosteriorSampleSet set;
  set.epsilon = epsilon;
  set.engine_id = calibration.engine_id;
  set.provenance.seed = cfg.seed;

  // Draws are simulated a block at a time but accepted strictly in draw order,
  // so the result does not depend on the worker count.
  const std::size_t block = std::max<std::size_t>(64, 32 * static_cast<std::size_t>(threads));
  std::vector<Draw> draws;
  bool done = false;
  for (std::size_t start = 0; start < cfg.n_main && !done; start += block) {
    const std::size_t end = std::min(cfg.n_main, start + block);
    draws.assign(end - start, Draw{});
    parallel_for(start, end, threads, [&](std::size_t i) { draws[i - start] = eval(i); });
    for (std::size_t i = start; i < end; ++i) {
      ++set.attempted;
      Draw& d = draws[i - start];
      if (d.distance <= epsilon) {
        set.samples.push_back(std::move(d.theta));
        set.distances.push_back(d.distance);
        set.draw_indices.push_back(i);
        if (set.samples.size() == cfg.n_desired) {
          done = true;
          break;
        }
      }
    }
  }
  if (set.samples.empty()) {
    throw Error(ErrorCode::NoSamplesAccepted,
                "no draw within epsilon " + io::format_double(epsilon) + " after " + std::to_string(set.attempted));
  }
  set.acceptance_rate = static_cast<double>(set.samples.size()) / static_cast<double>(set.attempted);
  return set;
}

BandSummary summarize(const Matrix& samples, const Vector& time) {
  if (samples.rows() == 0) throw Error(ErrorCode::EmptyPosterior, "empty ensemble");
  if (time.size() != samples.cols()) throw Error(ErrorCode::DimensionMismatch, "time length differs from ensemble");
  BandSummary s;
  s.time = time;
  s.median.resize(samples.cols());
  s.lo95.resize(samples.cols());
  s.hi95.resize(samples.cols());
  for (Eigen::Index t = 0; t < samples.cols(); ++t) {
    const auto sorted = stats::sorted_copy(samples.col(t));
    s.median(t) = stats::quantile_sorted<double>(sorted, 0.5);
    s.lo95(t) = stats::quantile_sorted<double>(sorted, 0.025);
    s.hi95(t) = stats::quantile_sorted<double>(sorted, 0.975);
  }
  return s;
}

PredictiveEnsemble posterior_predictive(const PosteriorSampleSet& set, const EngineDataset& ds_new,
                                        const gp::GpModel& model, const SelectionMatrix& sel, double sigma_y,
                                        std::uint64_t seed) {
  if (set.samples.empty()) throw Error(ErrorCode::EmptyPosterior, "posterior sample set is empty");
  if (!(sigma_y >= 0.0)) throw Error(ErrorCode::InvalidConfig, "sigma_y must be >= 0");
  const Simulator sim(ds_new, model, sel);
  PredictiveEnsemble ens;
  ens.samples.resize(static_cast<Eigen::Index>(set.samples.size()), sim.length());
  parallel_for(0, set.samples.size(), resolve_threads(0), [&](std::size_t s) {
    CounterRng rng = CounterRng::substream(seed, kPredictiveStream, s);
    ens.samples.row(static_cast<Eigen::Index>(s)) = sim.simulate(set.samples[s], sigma_y, rng).transpose();
  });
  ens.summary = summarize(ens.samples, sim.times());
  return ens;
}

EvaluationReport evaluate(const BandSummary& band, const Vector& observed, double dt) {
  const Eigen::Index n = observed.size();
  if (band.median.size() != n || band.lo95.size() != n || band.hi95.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "prediction and observation lengths differ");
  }
  EvaluationReport r;
  r.rmse = stats::rmse(observed, band.median);
  const auto pct = stats::abs_error_percentiles(observed, band.median);
  r.p90 = pct[0].value;
  r.p95 = pct[1].value;
  r.p98 = pct[2].value;
  Eigen::Index covered = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (band.lo95(t) <= observed(t) && observed(t) <= band.hi95(t)) ++covered;
  }
  r.coverage95 = static_cast<double>(covered) / static_cast<double>(n);
  r.cumulative_median = stats::cumulative_series(band.median, dt);
  r.cumulative_lo95 = stats::cumulative_series(band.lo95, dt);
  r.cumulative_hi95 = stats::cumulative_series(band.hi95, dt);
  r.cumulative_observed = stats::cumulative_series(observed, dt);
  return r;
}

EvaluationReport evaluate(const PredictiveEnsemble& ensemble, const Vector& observed, double dt) {
  return evaluate(ensemble.summary, observed, dt);
}

std::string posterior_to_json(const PosteriorSampleSet& set, const std::string& config_echo_json) {
  json j;
  j["format"] = "xcal-posterior";
  j["format_version"] = 1;
  j["engine_id"] = set.engine_id;
  j["provenance"] = {{"config_hash", set.provenance.config_hash},
                     {"model_hash", set.provenance.model_hash},
                     {"seed", set.provenance.seed}};
  j["config"] = json::parse(config_echo_json);
  j["epsilon"] = set.epsilon;
  j["acceptance_rate"] = set.acceptance_rate;
  j["attempted"] = set.attempted;
  json samples = json::array();
  for (std::size_t s = 0; s < set.samples.size(); ++s) {
    const auto& p = set.samples[s];
    samples.push_back({{"alpha", p.alpha},
                       {"b", std::vector<double>(p.b.data(), p.b.data() + p.b.size())},
                       {"distance", set.distances[s]},
                       {"draw", set.draw_indices.empty() ? 0 : set.draw_indices[s]}});
  }
  j["samples"] = std::move(samples);
  return j.dump(1) + "\n";
}

PosteriorSampleSet posterior_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "xcal-posterior") throw Error(ErrorCode::Io, "not a posterior artifact");
    PosteriorSampleSet set;
    set.engine_id = j.at("engine_id").get<std::string>();
    set.provenance.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    set.provenance.model_hash = j.at("provenance").at("model_hash").get<std::string>();
    set.provenance.seed = j.at("provenance").at("seed").get<std::uint64_t>();
    set.epsilon = j.at("epsilon").get<double>();
    set.acceptance_rate = j.at("acceptance_rate").get<double>();
    set.attempted = j.at("attempted").get<std::size_t>();
    for (const auto& s : j.at("samples")) {
      BiasParameters p;
      p.alpha = s.at("alpha").get<double>();
      const auto b = s.at("b").get<std::vector<double>>();
      p.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
      set.samples.push_back(std::move(p));
      set.distances.push_back(s.at("distance").get<double>());
      set.draw_indices.push_back(s.at("draw").get<std::uint64_t>());
    }
    return set;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed posterior artifact: ") + e.what());
  }
}

std::string marginal_summary_csv(const PosteriorSampleSet& set, const PriorSpec& prior,
                                 const std::vector<std::string>& b_names) {
  if (set.samples.empty()) throw Error(ErrorCode::EmptyPosterior, "posterior sample set is empty");
  std::ostringstream out;
  out << "parameter,prior_q05,prior_q50,prior_q95,posterior_q05,posterior_q50,posterior_q95\n";
  auto row = [&](const std::string& name, const Interval& iv, const Vector& values) {
    out << name;
    for (double q : {0.05, 0.5, 0.95}) out << ',' << io::format_double(iv.lo + q * iv.width());
    for (double q : {0.05, 0.5, 0.95}) out << ',' << io::format_double(stats::quantile(values, q));
    out << '\n';
  };
  const auto n = static_cast<Eigen::Index>(set.samples.size());
  Vector values(n);
  for (Eigen::Index s = 0; s < n; ++s) values(s) = set.samples[static_cast<std::size_t>(s)].alpha;
  row("alpha", prior.alpha, values);
  for (std::size_t k = 0; k < prior.b.size(); ++k) {
    for (Eigen::Index s = 0; s < n; ++s) values(s) = set.samples[static_cast<std::size_t>(s)].b(static_cast<Eigen::Index>(k));
    row("b_" + (k < b_names.size() ? b_names[k] : std::to_string(k)), prior.b[k], values);
  }
  return out.str();
}

std::string band_csv(const BandSummary& band, const Vector& observed) {
  const Eigen::Index n = band.median.size();
  if (band.time.size() != n || observed.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "band and observation lengths differ");
  }
  std::ostringstream out;
  out << "time_s,median,lo95,hi95,observed\n";
  for (Eigen::Index t = 0; t < n; ++t) {
    out << io::format_double(band.time(t)) << ',' << io::format_double(band.median(t)) << ','
        << io::format_double(band.lo95(t)) << ',' << io::format_double(band.hi95(t)) << ','
        << io::format_double(observed(t)) << '\n';
  }
  return out.str();
}

BandTable read_band_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  const char* names[] = {"time_s", "median", "lo95", "hi95", "observed"};
  long cols[5];
  for (int c = 0; c < 5; ++c) {
    cols[c] = table.column(names[c]);
    if (cols[c] < 0) throw Error(ErrorCode::MissingColumn, names[c]);
  }
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  if (n == 0) throw Error(ErrorCode::EmptyDataset, path.string() + " has no rows");
  BandTable out;
  Vector* targets[] = {&out.band.time, &out.band.median, &out.band.lo95, &out.band.hi95, &out.observed};
  for (auto* v : targets) v->resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    for (int c = 0; c < 5; ++c) {
      const auto idx = static_cast<std::size_t>(cols[c]);
      const auto v = idx < row.size() ? io::parse_double(row[idx]) : std::nullopt;
      // Bands may legitimately be infinite; only NaN and garbage are rejected.
      if (!v || std::isnan(*v)) throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(r), r);
      (*targets[c])(r) = *v;
    }
  }
  return out;
}

}  // namespace xcal::abc
