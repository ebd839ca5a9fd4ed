#include "doctest.h"
#include "support.hpp"

#include "xcal/synth.hpp"

#include <cmath>
#include <limits>
#include <set>

using namespace xcal;

namespace {

synth::SynthConfig engine_config(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.seed = seed;
  cfg.duration_s = 600;
  cfg.true_alpha = 80.0;
  cfg.true_b = Vector(3);
  cfg.true_b << 30.0, -2.0, 0.4;
  cfg.engine_id = "engine";
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  synth::SynthConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.duration_s = 59;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.true_b = Vector::Zero(2);
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.mask = {true, false};
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(synth::parse_cycle("steady") == synth::CycleKind::Steady);
  CHECK_THROWS_AS(synth::parse_cycle("ramp"), Error);
}

TEST_CASE("generation is deterministic") {
  for (auto kind : {synth::CycleKind::Transient, synth::CycleKind::Steady, synth::CycleKind::Mixed}) {
    synth::SynthConfig cfg;
    cfg.cycle = kind;
    cfg.process_noise_std = 0.0;
    const auto a = synth::generate_nominal(cfg);
    const auto b = synth::generate_nominal(cfg);
    CHECK(a.inputs == b.inputs);
    CHECK(a.nox == b.nox);
    CHECK(a.length() == 1201);
    CHECK(a.nox.allFinite());
    CHECK((a.nox.array() >= 0.0).all());
    cfg.seed = 2;
    CHECK(synth::generate_nominal(cfg).inputs != a.inputs);
  }
}

TEST_CASE("inputs stay inside the channel ranges") {
  synth::SynthConfig cfg;
  cfg.cycle = synth::CycleKind::Mixed;
  cfg.duration_s = 3000;
  const auto latent = synth::generate_latent_inputs(cfg);
  for (Eigen::Index j = 0; j < latent.cols(); ++j) {
    const auto r = synth::channel_range(j);
    CHECK(latent.col(j).minCoeff() >= r.lo);
    CHECK(latent.col(j).maxCoeff() <= r.hi);
  }
}

TEST_CASE("steady cycles are piecewise constant with many levels") {
  synth::SynthConfig cfg;
  cfg.cycle = synth::CycleKind::Steady;
  cfg.process_noise_std = 0.0;
  const auto ds = synth::generate_nominal(cfg);
  std::set<double> levels;
  Eigen::Index changes = 0;
  for (Eigen::Index t = 0; t < ds.length(); ++t) {
    levels.insert(ds.inputs(t, 1));
    if (t > 0 && ds.inputs.row(t) != ds.inputs.row(t - 1)) ++changes;
  }
  CHECK(levels.size() >= 10);
  CHECK(changes < ds.length() / 10);
}

TEST_CASE("response depends on the whole history") {
  std::mt19937_64 gen(8);
  RowMatrix history(synth::kMemory, synth::kCoreChannels);
  for (Eigen::Index j = 0; j < synth::kCoreChannels; ++j) {
    const auto r = synth::channel_range(j);
    history.col(j) = test::random_vector(gen, synth::kMemory, r.lo + 0.3 * (r.hi - r.lo), r.hi);
  }
  const double base = synth::nox_response(history);
  RowMatrix reversed = history.colwise().reverse();
  CHECK(synth::nox_response(reversed) != base);

  // The oldest row still matters.
  RowMatrix older = history;
  older(0, 1) += 20.0;
  CHECK(synth::nox_response(older) != base);
  CHECK_THROWS_AS(synth::nox_response(RowMatrix(history.topRows(4))), Error);
}

TEST_CASE("every documented channel moves the response") {
  RowMatrix history(synth::kMemory, synth::kCoreChannels);
  for (Eigen::Index j = 0; j < synth::kCoreChannels; ++j) {
    const auto r = synth::channel_range(j);
    history.col(j).setConstant(0.5 * (r.lo + r.hi));
  }
  const double base = synth::nox_response(history);
  for (Eigen::Index j = 0; j < synth::kCoreChannels; ++j) {
    RowMatrix moved = history;
    moved(synth::kMemory - 1, j) += 0.1 * (synth::channel_range(j).hi - synth::channel_range(j).lo);
    CHECK(synth::nox_response(moved) != base);
  }
}

TEST_CASE("zero bias reproduces the nominal engine") {
  synth::SynthConfig cfg;
  cfg.cycle = synth::CycleKind::Steady;
  const auto nominal = synth::generate_nominal(cfg);
  const auto engine = synth::generate_sample_engine(cfg);
  CHECK(engine.inputs == nominal.inputs);
  CHECK(engine.nox == nominal.nox);
}

TEST_CASE("recorded inputs are the latent inputs read through biased sensors") {
  const auto cfg = engine_config(5);
  const auto latent = synth::generate_latent_inputs(cfg);
  const auto engine = synth::generate_sample_engine(cfg);
  const SelectionMatrix sel(cfg.mask);
  const Vector shift = sel.embed(cfg.true_b);
  // Equal up to the rounding of x + b - b.
  const double tol = 4.0 * std::numeric_limits<double>::epsilon() * latent.cwiseAbs().maxCoeff();
  const RowMatrix diff = engine.inputs - latent;
  for (Eigen::Index t = 0; t < engine.length(); ++t) {
    CHECK((diff.row(t).transpose() - shift).cwiseAbs().maxCoeff() <= tol);
  }
  CHECK((apply_bias(engine.inputs, sel, cfg.true_b) - latent).cwiseAbs().maxCoeff() <= tol);
  CHECK(diff.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(diff.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual at the true biases is the process noise") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto cfg = engine_config(seed);
    const auto engine = synth::generate_sample_engine(cfg);
    const SelectionMatrix sel(cfg.mask);
    const Vector h = synth::nox_response_sequence(apply_bias(engine.inputs, sel, cfg.true_b));
    const Vector resid = engine.nox - h - Vector::Constant(h.size(), cfg.true_alpha);
    const double sd = std::sqrt((resid.array() - resid.mean()).square().sum() / (resid.size() - 1));
    CHECK(sd == doctest::Approx(cfg.process_noise_std).epsilon(0.1));
  }
}

TEST_CASE("identifiability ratios") {
  synth::SynthConfig cfg;
  cfg.duration_s = 1200;
  const auto latent = synth::generate_latent_inputs(cfg);
  const SelectionMatrix sel(cfg.mask);
  Vector hw(3);
  hw << 70, 4, 0.6;
  const Vector r = synth::identifiability_ratios(latent, sel, hw, 5.0);
  CHECK((r.array() >= 3.0).all());
  const Vector half = synth::identifiability_ratios(latent, sel, hw, 10.0);
  CHECK((half - 0.5 * r).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(synth::identifiability_ratios(latent, sel, Vector::Ones(2), 5.0), Error);
}

TEST_CASE("nuisance channels do not move the response") {
  synth::SynthConfig cfg;
  cfg.d = 7;
  cfg.mask = {false, false, true, true, true, false, false};
  cfg.process_noise_std = 0.0;
  const auto wide = synth::generate_nominal(cfg);
  CHECK(wide.channels() == 7);
  const Vector h = synth::nox_response_sequence(wide.inputs);
  CHECK((h - wide.nox).cwiseAbs().maxCoeff() == 0.0);
  CHECK(synth::default_schema(2).channels.size() == 7);
}
