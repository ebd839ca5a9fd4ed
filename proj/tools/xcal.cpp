#include "xcal/config.hpp"
#include "xcal/io.hpp"
#include "xcal/pipeline.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace xcal;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::string slice = "holdout";
  std::vector<std::string> engines;
  std::vector<std::string> cycles;
  std::string predictions;
  std::string baseline;
  std::string output;
};

RunConfig load(const Options& opt) {
  RunConfig cfg = load_config(opt.config_path);
  if (opt.seed) cfg.abc.seed = *opt.seed;
  return cfg;
}

std::vector<std::string> engines_or_all(const RunConfig& cfg, const Options& opt) {
  return opt.engines.empty() ? pipeline::engine_ids(cfg) : opt.engines;
}

std::vector<std::string> cycles_or_all(const Options& opt) {
  return opt.cycles.empty() ? pipeline::kCycles : opt.cycles;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void print_metrics(const std::string& label, const abc::EvaluationReport& r) {
  std::cout << "  " << label << ": rmse " << r.rmse << "  p90 " << r.p90 << "  p95 " << r.p95 << "  p98 " << r.p98
            << "  coverage95 " << r.coverage95 << "\n";
}

void run_simulate(const Options& opt) {
  const auto cfg = load(opt);
  for (const auto& path : pipeline::simulate(cfg)) std::cout << "wrote " << path.string() << "\n";
}

void run_train(const Options& opt) {
  const auto cfg = load(opt);
  const auto start = std::chrono::steady_clock::now();
  const auto path = pipeline::train(cfg);
  std::cout << "wrote " << path.string() << " (" << seconds_since(start) << " s)\n";
}

void run_calibrate(const Options& opt) {
  const auto cfg = load(opt);
  pipeline::CalibrateOptions copt;
  copt.epsilon = opt.epsilon;
  for (const auto& cycle : cycles_or_all(opt)) {
    for (const auto& engine : engines_or_all(cfg, opt)) {
      const auto start = std::chrono::steady_clock::now();
      const auto set = pipeline::calibrate(cfg, engine, cycle, copt);
      std::cout << engine << " " << cycle << ": epsilon " << set.epsilon << ", accepted " << set.samples.size() << "/"
                << set.attempted << " (" << seconds_since(start) << " s)\n";
    }
  }
}

void run_predict(const Options& opt) {
  const auto cfg = load(opt);
  const auto slice = pipeline::parse_slice(opt.slice);
  for (const auto& cycle : cycles_or_all(opt)) {
    for (const auto& engine : engines_or_all(cfg, opt)) {
      pipeline::predict(cfg, engine, cycle, slice);
      std::cout << "wrote " << pipeline::prediction_path(cfg, engine, cycle).string() << "\n";
    }
  }
}

void run_evaluate(const Options& opt) {
  if (!opt.predictions.empty()) {
    // Explicit files; dt follows the config when one is given.
    const double dt = opt.config_path.empty() ? 1.0 : 1.0 / load(opt).schema.sample_rate_hz;
    const std::optional<fs::path> baseline =
        opt.baseline.empty() ? std::nullopt : std::optional<fs::path>(opt.baseline);
    const auto report = pipeline::evaluate_files(opt.predictions, baseline, dt);
    const auto text = pipeline::report_json(report);
    if (opt.output.empty()) {
      std::cout << text;
    } else {
      io::write_text(opt.output, text);
    }
    return;
  }
  if (opt.config_path.empty()) throw CLI::RequiredError("--config or --predictions");
  const auto cfg = load(opt);
  for (const auto& cycle : cycles_or_all(opt)) {
    for (const auto& engine : engines_or_all(cfg, opt)) {
      const auto report = pipeline::evaluate(cfg, engine, cycle);
      std::cout << engine << " " << cycle << "\n";
      print_metrics("calibrated", report.calibrated);
      if (report.baseline) print_metrics("baseline  ", *report.baseline);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias calibration of a GP NOx surrogate with ABC"};
  app.require_subcommand(1);
  Options opt;

  auto add_config = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("-c,--config", opt.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
    if (required) o->required();
    sub->add_option("--seed", opt.seed, "overrides abc.seed");
  };
  auto add_targets = [&](CLI::App* sub) {
    sub->add_option("--engine", opt.engines, "engine id (default: every simulated engine)");
    sub->add_option("--cycle", opt.cycles, "transient or steady (default: both)");
  };

  auto* simulate = app.add_subcommand("simulate", "write the synthetic datasets and ground truth");
  add_config(simulate, true);
  auto* train = app.add_subcommand("train", "fit the surrogate on the nominal training set");
  add_config(train, true);
  auto* calibrate = app.add_subcommand("calibrate", "ABC posterior of the biases of one or more engines");
  add_config(calibrate, true);
  add_targets(calibrate);
  calibrate->add_option("--epsilon", opt.epsilon, "fixed tolerance; skips the pilot phase")->check(CLI::NonNegativeNumber);
  auto* predict = app.add_subcommand("predict", "posterior predictive bands and the uncalibrated baseline");
  add_config(predict, true);
  add_targets(predict);
  predict->add_option("--slice", opt.slice, "holdout, full or calibration")
      ->check(CLI::IsMember({"holdout", "full", "calibration"}));
  auto* evaluate = app.add_subcommand("evaluate", "metrics and cumulative plot data");
  add_config(evaluate, false);
  add_targets(evaluate);
  evaluate->add_option("--predictions", opt.predictions, "band CSV to score instead of the configured layout")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--baseline", opt.baseline, "baseline band CSV")->check(CLI::ExistingFile);
  evaluate->add_option("-o,--output", opt.output, "report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*simulate) run_simulate(opt);
    if (*train) run_train(opt);
    if (*calibrate) run_calibrate(opt);
    if (*predict) run_predict(opt);
    if (*evaluate) run_evaluate(opt);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return pipeline::exit_code(e.code());
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
