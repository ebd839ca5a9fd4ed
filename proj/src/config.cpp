#include "xcal/config.hpp"

#include "xcal/io.hpp"

#include "json.hpp"

#include <set>

namespace xcal {

using json = nlohmann::json;

namespace {

abc::Interval parse_interval(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::InvalidConfig, what + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json interval_json(const abc::Interval& iv) { return json::array({iv.lo, iv.hi}); }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<std::string> RunConfig::measured_names() const {
  std::vector<std::string> names;
  for (const auto& c : schema.channels) {
    if (c.role == ChannelRole::Measured) names.push_back(c.name);
  }
  return names;
}

const CalibrationWindow& RunConfig::window(const std::string& name) const {
  const auto it = windows.find(name);
  if (it == windows.end()) throw Error(ErrorCode::InvalidConfig, "no calibration window named '" + name + "'");
  return it->second;
}

void RunConfig::validate() const {
  schema.validate();
  if (schema.channels.empty()) throw Error(ErrorCode::InvalidConfig, "schema has no channels");
  const auto sel = selection();
  if (sel.d_nc() == 0) throw Error(ErrorCode::InvalidConfig, "calibration needs at least one measured channel");
  if (!(surrogate.window_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "gp.window_s must be positive");
  try {
    window_samples(surrogate.window_s, schema.sample_rate_hz);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  if (surrogate.train.adam.steps < 0) throw Error(ErrorCode::InvalidConfig, "gp.steps must be >= 0");
  if (!(surrogate.train.adam.learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "gp.learning_rate must be > 0");
  if (surrogate.train.n_max < 2) throw Error(ErrorCode::InvalidConfig, "gp.n_max must be >= 2");
  try {
    prior.validate(sel.d_nc());
    abc.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  for (const auto& [name, w] : windows) {
    if (!(w.warmup_s >= 0.0) || !(w.length_s > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "window '" + name + "' needs warmup_s >= 0 and length_s > 0");
    }
  }
  // Windows named after a simulated cycle must leave a holdout on it.
  const std::map<std::string, double> durations{{"transient", simulate.transient_duration_s},
                                                {"steady", simulate.steady_duration_s}};
  for (const auto& [cycle, duration] : durations) {
    const auto it = windows.find(cycle);
    if (it != windows.end() && it->second.warmup_s + it->second.length_s >= duration) {
      throw Error(ErrorCode::InvalidConfig, "window '" + cycle + "' leaves no holdout on the simulated cycle");
    }
  }
  for (const auto& e : simulate.engines) {
    if (e.b.size() != sel.d_nc()) {
      throw Error(ErrorCode::InvalidConfig, "engine '" + e.id + "' needs one bias per measured channel");
    }
  }
}

std::string RunConfig::canonical_json() const {
  json j;
  json channels = json::array();
  for (const auto& c : schema.channels) {
    channels.push_back({{"name", c.name},
                        {"role", c.role == ChannelRole::Measured ? "measured" : "control"},
                        {"units", c.units}});
  }
  j["schema"] = {{"channels", channels}, {"sample_rate_hz", schema.sample_rate_hz}};
  j["transform"] = {{"transform_inputs", surrogate.transform_inputs}, {"n_quantiles", surrogate.n_quantiles}};
  const auto& t = surrogate.train;
  j["gp"] = {{"window_s", surrogate.window_s},
             {"ard", t.ard},
             {"n_max", t.n_max},
             {"steps", t.adam.steps},
             {"learning_rate", t.adam.learning_rate},
             {"beta1", t.adam.beta1},
             {"beta2", t.adam.beta2},
             {"init_lengthscale", t.init_lengthscale},
             {"init_signal_variance", t.init_signal_variance},
             {"init_noise_variance", t.init_noise_variance}};
  json b = json::object();
  const auto names = measured_names();
  for (std::size_t k = 0; k < prior.b.size() && k < names.size(); ++k) b[names[k]] = interval_json(prior.b[k]);
  j["prior"] = {{"alpha", interval_json(prior.alpha)}, {"b", b}};
  j["abc"] = {{"n_pilot", abc.n_pilot}, {"n_main", abc.n_main}, {"n_desired", abc.n_desired},
              {"zeta", abc.zeta},       {"sigma_y", abc.sigma_y}, {"seed", abc.seed}};
  json windows_json = json::object();
  for (const auto& [name, w] : windows) windows_json[name] = {{"warmup_s", w.warmup_s}, {"length_s", w.length_s}};
  j["windows"] = windows_json;
  json engines = json::array();
  for (const auto& e : simulate.engines) {
    engines.push_back({{"id", e.id}, {"alpha", e.alpha}, {"b", std::vector<double>(e.b.data(), e.b.data() + e.b.size())}});
  }
  j["simulate"] = {{"training_duration_s", simulate.training_duration_s},
                   {"transient_duration_s", simulate.transient_duration_s},
                   {"steady_duration_s", simulate.steady_duration_s},
                   {"process_noise_std", simulate.process_noise_std},
                   {"training_seed", simulate.training_seed},
                   {"transient_seed", simulate.transient_seed},
                   {"steady_seed", simulate.steady_seed},
                   {"engines", engines}};
  return j.dump();
}

std::string RunConfig::hash() const { return io::hex64(io::fnv1a(canonical_json())); }

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    const auto& schema = j.at("schema");
    cfg.schema.sample_rate_hz = get_or(schema, "sample_rate_hz", 1.0);
    for (const auto& c : schema.at("channels")) {
      ChannelSpec spec;
      spec.name = c.at("name").get<std::string>();
      const auto role = c.at("role").get<std::string>();
      if (role == "measured") {
        spec.role = ChannelRole::Measured;
      } else if (role == "control") {
        spec.role = ChannelRole::Control;
      } else {
        throw Error(ErrorCode::InvalidConfig, "channel role must be 'control' or 'measured'");
      }
      spec.units = get_or<std::string>(c, "units", "");
      cfg.schema.channels.push_back(std::move(spec));
    }
    cfg.surrogate.sample_rate_hz = cfg.schema.sample_rate_hz;

    if (j.contains("transform")) {
      const auto& t = j.at("transform");
      cfg.surrogate.transform_inputs = get_or(t, "transform_inputs", true);
      cfg.surrogate.n_quantiles = get_or<std::size_t>(t, "n_quantiles", 0);
    }
    if (j.contains("gp")) {
      const auto& g = j.at("gp");
      auto& tr = cfg.surrogate.train;
      cfg.surrogate.window_s = get_or(g, "window_s", 5.0);
      tr.ard = get_or(g, "ard", true);
      tr.n_max = get_or<std::size_t>(g, "n_max", 2000);
      tr.adam.steps = get_or(g, "steps", 500);
      tr.adam.learning_rate = get_or(g, "learning_rate", 0.05);
      tr.adam.beta1 = get_or(g, "beta1", 0.9);
      tr.adam.beta2 = get_or(g, "beta2", 0.999);
      tr.init_lengthscale = get_or(g, "init_lengthscale", 1.0);
      tr.init_signal_variance = get_or(g, "init_signal_variance", 1.0);
      tr.init_noise_variance = get_or(g, "init_noise_variance", 0.1);
    }

    // Prior bounds carry no defaults.
    const auto& prior = j.at("prior");
    cfg.prior.alpha = parse_interval(prior.at("alpha"), "prior.alpha");
    const auto& b = prior.at("b");
    for (const auto& c : cfg.schema.channels) {
      if (c.role != ChannelRole::Measured) continue;
      if (!b.contains(c.name)) throw Error(ErrorCode::InvalidConfig, "prior.b is missing channel '" + c.name + "'");
      cfg.prior.b.push_back(parse_interval(b.at(c.name), "prior.b." + c.name));
    }

    const auto& a = j.at("abc");
    cfg.abc.n_pilot = get_or<std::size_t>(a, "n_pilot", 1000);
    cfg.abc.n_main = get_or<std::size_t>(a, "n_main", 10000);
    cfg.abc.n_desired = get_or<std::size_t>(a, "n_desired", 500);
    cfg.abc.zeta = get_or(a, "zeta", 0.05);
    cfg.abc.sigma_y = a.at("sigma_y").get<double>();
    cfg.abc.seed = get_or<std::uint64_t>(a, "seed", 0);
    cfg.abc.threads = get_or<unsigned>(a, "threads", 0);

    if (j.contains("windows")) {
      for (const auto& [name, w] : j.at("windows").items()) {
        cfg.windows[name] = {w.at("warmup_s").get<double>(), w.at("length_s").get<double>()};
      }
    } else {
      cfg.windows["transient"] = {80.0, 200.0};
      cfg.windows["steady"] = {400.0, 450.0};
    }

    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      auto& sim = cfg.simulate;
      sim.training_duration_s = get_or(s, "training_duration_s", sim.training_duration_s);
      sim.transient_duration_s = get_or(s, "transient_duration_s", sim.transient_duration_s);
      sim.steady_duration_s = get_or(s, "steady_duration_s", sim.steady_duration_s);
      sim.process_noise_std = get_or(s, "process_noise_std", sim.process_noise_std);
      sim.training_seed = get_or(s, "training_seed", sim.training_seed);
      sim.transient_seed = get_or(s, "transient_seed", sim.transient_seed);
      sim.steady_seed = get_or(s, "steady_seed", sim.steady_seed);
      if (s.contains("engines")) {
        std::set<std::string> ids;
        for (const auto& e : s.at("engines")) {
          SimulatedEngine eng;
          eng.id = e.at("id").get<std::string>();
          if (!ids.insert(eng.id).second) throw Error(ErrorCode::InvalidConfig, "duplicate engine id " + eng.id);
          eng.alpha = e.at("alpha").get<double>();
          const auto bv = e.at("b").get<std::vector<double>>();
          eng.b = Eigen::Map<const Vector>(bv.data(), static_cast<Eigen::Index>(bv.size()));
          sim.engines.push_back(std::move(eng));
        }
      }
    }

    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      cfg.data_dir = resolve(base_dir, get_or<std::string>(p, "data_dir", "data"));
      cfg.artifact_dir = resolve(base_dir, get_or<std::string>(p, "artifact_dir", "artifacts"));
      cfg.report_dir = resolve(base_dir, get_or<std::string>(p, "report_dir", "reports"));
    } else {
      cfg.data_dir = base_dir / "data";
      cfg.artifact_dir = base_dir / "artifacts";
      cfg.report_dir = base_dir / "reports";
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  return parse_config(text, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

std::string default_config_json() {
  return R"({
  "schema": {
    "sample_rate_hz": 1,
    "channels": [
      {"name": "engine_speed", "role": "control", "units": "rpm"},
      {"name": "fuel_quantity", "role": "control", "units": "mg/stroke"},
      {"name": "air_flow", "role": "measured", "units": "kg/h"},
      {"name": "intake_temp", "role": "measured", "units": "degC"},
      {"name": "o2_concentration", "role": "measured", "units": "%"}
    ]
  },
  "transform": {"transform_inputs": true, "n_quantiles": 1000},
  "gp": {"window_s": 5, "ard": true, "n_max": 500, "steps": 300, "learning_rate": 0.05},
  "prior": {
    "alpha": [-300, 300],
    "b": {"air_flow": [-70, 70], "intake_temp": [-4, 4], "o2_concentration": [-0.6, 0.6]}
  },
  "abc": {"n_pilot": 1000, "n_main": 10000, "n_desired": 500, "zeta": 0.05, "sigma_y": 25, "seed": 2025},
  "windows": {
    "transient": {"warmup_s": 80, "length_s": 200},
    "steady": {"warmup_s": 400, "length_s": 450}
  },
  "simulate": {
    "training_duration_s": 4000,
    "transient_duration_s": 1200,
    "steady_duration_s": 1300,
    "process_noise_std": 5,
    "training_seed": 11,
    "transient_seed": 21,
    "steady_seed": 31,
    "engines": [
      {"id": "engine1", "alpha": 269.2, "b": [41.4, -3.25, -0.49]},
      {"id": "engine2", "alpha": -167.6, "b": [-60.2, -2.95, -0.33]},
      {"id": "engine3", "alpha": -145.0, "b": [-33.4, 3.55, -0.37]}
    ]
  },
  "paths": {"data_dir": "data", "artifact_dir": "artifacts", "report_dir": "reports"}
}
)";
}

}  // namespace xcal
