#include "doctest.h"
#include "support.hpp"

#include "xcal/config.hpp"
#include "xcal/io.hpp"
#include "xcal/pipeline.hpp"

#include <sys/wait.h>

#include <cstdlib>

using namespace xcal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ErrorCode parse_error(const json& j) {
  try {
    parse_config(j.dump());
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("config was accepted");
  return ErrorCode::Io;
}

fs::path write_config(const fs::path& root, const json& j) {
  const auto path = root / "config.json";
  io::write_text(path, j.dump(2));
  return path;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(XCAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("default configuration") {
  const auto cfg = parse_config(default_config_json());
  CHECK(cfg.schema.size() == 5);
  CHECK(cfg.selection().d_nc() == 3);
  CHECK(cfg.measured_names() == std::vector<std::string>{"air_flow", "intake_temp", "o2_concentration"});
  CHECK(cfg.surrogate.window_s == 5.0);
  CHECK(cfg.abc.n_desired == 500);
  CHECK(cfg.simulate.engines.size() == 3);
  CHECK(cfg.window("transient").length_s == 200.0);
  CHECK(cfg.window("steady").warmup_s == 400.0);
  CHECK_THROWS_AS(cfg.window("other"), Error);
  CHECK(cfg.hash() == parse_config(default_config_json()).hash());

  // Paths do not enter the hash; numbers do.
  auto j = json::parse(default_config_json());
  j["paths"]["data_dir"] = "elsewhere";
  CHECK(parse_config(j.dump()).hash() == cfg.hash());
  j["abc"]["seed"] = 7;
  CHECK(parse_config(j.dump()).hash() != cfg.hash());
}

TEST_CASE("invalid configurations") {
  const auto base = json::parse(default_config_json());
  auto j = base;
  j["gp"]["window_s"] = 0;
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["gp"]["window_s"] = 2.5;
  CHECK(parse_error(j) != ErrorCode::Io);
  j = base;
  j["abc"]["zeta"] = 0;
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["abc"]["n_desired"] = 20000;
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["abc"]["sigma_y"] = -1;
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["prior"]["alpha"] = {5, -5};
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["prior"]["b"].erase("intake_temp");
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j.erase("prior");
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["windows"]["transient"]["length_s"] = 2000;
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  j = base;
  j["simulate"]["engines"][0]["b"] = {1.0};
  CHECK(parse_error(j) == ErrorCode::InvalidConfig);
  CHECK_THROWS_AS(parse_config("{not json"), Error);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("exit codes") {
  CHECK(pipeline::exit_code(ErrorCode::InvalidConfig) == 1);
  CHECK(pipeline::exit_code(ErrorCode::Io) == 2);
  CHECK(pipeline::exit_code(ErrorCode::MissingColumn) == 2);
  CHECK(pipeline::exit_code(ErrorCode::NoSamplesAccepted) == 3);
  CHECK(pipeline::exit_code(ErrorCode::FactorizationFailed) == 3);
  CHECK(pipeline::exit_code(ErrorCode::ProvenanceMismatch) == 4);
  CHECK(pipeline::parse_slice("full") == pipeline::Slice::Full);
  CHECK_THROWS_AS(pipeline::parse_slice("tail"), Error);
}

TEST_CASE("simulated study files") {
  const auto root = test::scratch_dir("pipeline_sim");
  auto j = test::small_config(root);
  j["simulate"]["engines"].push_back({{"id", "unbiased"}, {"alpha", 0.0}, {"b", {0.0, 0.0, 0.0}}});
  const auto cfg = parse_config(j.dump());
  const auto written = pipeline::simulate(cfg);
  // Training set, nominal + 4 engines on two cycles, ground truth.
  CHECK(written.size() == 1 + 2 * 5 + 1);
  for (const auto& p : written) CHECK(fs::exists(p));
  for (const auto& cycle : pipeline::kCycles) {
    CHECK(io::read_text(pipeline::dataset_path(cfg, "unbiased", cycle)) ==
          io::read_text(pipeline::dataset_path(cfg, "nominal", cycle)));
    CHECK(io::read_text(pipeline::dataset_path(cfg, "engine1", cycle)) !=
          io::read_text(pipeline::dataset_path(cfg, "nominal", cycle)));
  }
  const auto truth = json::parse(io::read_text(pipeline::ground_truth_path(cfg)));
  CHECK(truth["engines"].size() == 4);
  CHECK(truth["engines"][0]["alpha"].get<double>() == 269.2);
  CHECK(truth["config_hash"] == cfg.hash());

  const auto ds = load_dataset(pipeline::dataset_path(cfg, "engine2", "steady"), cfg.schema);
  CHECK(ds.length() == 1301);

  // Half-widths far below the noise floor make the study ill-posed.
  j["prior"]["b"]["intake_temp"] = {-0.01, 0.01};
  CHECK_THROWS_AS(pipeline::simulate(parse_config(j.dump())), Error);
}

TEST_CASE("pipeline stages and provenance") {
  const auto root = test::scratch_dir("pipeline_run");
  const auto j = test::small_config(root);
  const auto cfg = parse_config(j.dump());
  pipeline::simulate(cfg);
  const auto model_file = pipeline::train(cfg);
  const std::string model_text = io::read_text(model_file);
  pipeline::train(cfg);
  CHECK(io::read_text(model_file) == model_text);

  const auto set = pipeline::calibrate(cfg, "engine1", "transient");
  CHECK(set.samples.size() == 40);
  CHECK(set.provenance.model_hash == io::hex64(io::fnv1a(model_text)));
  CHECK(set.provenance.config_hash == cfg.hash());
  CHECK(fs::exists(pipeline::marginal_path(cfg, "engine1", "transient")));

  pipeline::predict(cfg, "engine1", "transient");
  const auto band = abc::read_band_csv(pipeline::prediction_path(cfg, "engine1", "transient"));
  // Holdout after an 80 s warmup and a 200 s window on a 1201-sample cycle.
  CHECK(band.band.time(0) == 281.0);
  CHECK(band.band.time.size() == 920);
  CHECK((band.band.lo95.array() <= band.band.hi95.array()).all());
  const auto baseline = abc::read_band_csv(pipeline::baseline_path(cfg, "engine1", "transient"));
  CHECK(baseline.band.lo95 == baseline.band.hi95);
  CHECK(baseline.observed == band.observed);

  const auto report = pipeline::evaluate(cfg, "engine1", "transient");
  REQUIRE(report.baseline);
  CHECK(report.calibrated.coverage95 >= 0.0);
  CHECK(report.baseline->coverage95 < 0.1);
  const auto rj = json::parse(io::read_text(pipeline::report_path(cfg, "engine1", "transient")));
  CHECK(rj["calibrated"]["rmse"].get<double>() == doctest::Approx(report.calibrated.rmse));
  CHECK(rj.contains("rmse_ratio"));
  const auto cum = io::read_csv(pipeline::cumulative_path(cfg, "engine1", "transient"));
  CHECK(cum.rows.size() == 920);

  pipeline::predict(cfg, "engine1", "transient", pipeline::Slice::Full);
  CHECK(abc::read_band_csv(pipeline::prediction_path(cfg, "engine1", "transient")).band.time.size() == 1197);

  // A posterior copied onto another engine is rejected.
  fs::copy_file(pipeline::posterior_path(cfg, "engine1", "transient"),
                pipeline::posterior_path(cfg, "engine2", "transient"));
  try {
    pipeline::predict(cfg, "engine2", "transient");
    FAIL("expected ProvenanceMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ProvenanceMismatch);
  }
}

TEST_CASE("command line") {
  const auto root = test::scratch_dir("pipeline_cli");
  auto j = test::small_config(root);
  const auto config = write_config(root, j).string();

  CHECK(cli("") == 1);
  CHECK(cli("calibrate") == 1);
  CHECK(cli("train -c " + (root / "missing.json").string()) == 1);
  CHECK(cli("predict -c " + config + " --slice tail") == 1);
  CHECK(cli("--help") == 0);

  // Training before simulating: no input file.
  CHECK(cli("train -c " + config) == 2);

  CHECK(cli("simulate -c " + config) == 0);
  CHECK(cli("train -c " + config) == 0);
  CHECK(cli("calibrate -c " + config + " --engine engine1 --cycle transient") == 0);
  CHECK(cli("predict -c " + config + " --engine engine1 --cycle transient") == 0);
  CHECK(cli("evaluate -c " + config + " --engine engine1 --cycle transient") == 0);

  const auto cfg = load_config(config);
  const auto pred = pipeline::prediction_path(cfg, "engine1", "transient").string();
  const auto out = (root / "report.json").string();
  CHECK(cli("evaluate --predictions " + pred + " -o " + out) == 0);
  CHECK(json::parse(io::read_text(out))["calibrated"]["coverage95"].is_number());

  CHECK(cli("calibrate -c " + config + " --engine engine1 --cycle transient --epsilon 0") == 3);
  CHECK(cli("calibrate -c " + config + " --engine nobody --cycle transient") == 2);

  // Retraining with another seed changes the model under the posterior.
  CHECK(cli("train -c " + config + " --seed 99") == 0);
  CHECK(cli("predict -c " + config + " --engine engine1 --cycle transient") == 4);

  io::write_text(pipeline::model_path(cfg), "{\"format\": \"truncated");
  CHECK(cli("predict -c " + config + " --engine engine1 --cycle transient") == 2);

  // Output directory missing.
  j["paths"]["data_dir"] = (root / "absent" / "data").string();
  const auto broken = write_config(root, j).string();
  CHECK(cli("simulate -c " + broken) == 2);
}
