#include "doctest.h"
#include "support.hpp"

#include "xcal/gp.hpp"
#include "xcal/synth.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace xcal;

namespace {

gp::RbfHyperparams hyper(Vector lengthscales, double sf, double sn) {
  gp::RbfHyperparams h;
  h.log_lengthscales = lengthscales.array().log().matrix();
  h.log_signal_variance = std::log(sf);
  h.log_noise_variance = std::log(sn);
  return h;
}

gp::RbfHyperparams random_hyper(std::mt19937_64& gen, Eigen::Index dims) {
  gp::RbfHyperparams h;
  h.log_lengthscales = test::random_vector(gen, dims, -0.7, 0.7);
  h.log_signal_variance = test::random_vector(gen, 1, -0.5, 0.5)(0);
  h.log_noise_variance = test::random_vector(gen, 1, -3.0, -1.0)(0);
  return h;
}

// Draws y ~ N(0, K + sn I) at X.
Vector sample_prior(std::mt19937_64& gen, const RowMatrix& X, const gp::RbfHyperparams& h) {
  Matrix K = gp::rbf_kernel(X, X, h);
  K.diagonal().array() += h.noise_variance() + 1e-10;
  const Matrix L = K.llt().matrixL();
  std::normal_distribution<double> n(0.0, 1.0);
  Vector z(X.rows());
  for (auto& v : z) v = n(gen);
  return L * z;
}

gp::GpModel small_surrogate() {
  synth::SynthConfig sc;
  sc.cycle = synth::CycleKind::Mixed;
  sc.duration_s = 400;
  sc.seed = 3;
  gp::SurrogateConfig cfg;
  cfg.train.adam.steps = 40;
  cfg.train.n_max = 120;
  return gp::fit_surrogate(synth::generate_nominal(sc), cfg, 1);
}

}  // namespace

TEST_CASE("kernel values") {
  RowMatrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 1, 2;
  Vector ls(2);
  ls << 1, 2;
  const Matrix K = gp::rbf_kernel(a, b, ls, 2.0);
  CHECK(K(0, 0) == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-15));
  CHECK(gp::rbf_kernel(a, a, ls, 2.0)(0, 0) == 2.0);

  double prev = 2.0;
  for (double dx = 0.1; dx < 10.0; dx += 0.1) {
    RowMatrix c(1, 2);
    c << dx, 0.0;
    const double k = gp::rbf_kernel(a, c, ls, 2.0)(0, 0);
    CHECK(k < prev);
    prev = k;
  }
  CHECK(prev < 1e-20);

  RowMatrix wrong(1, 3);
  wrong.setZero();
  CHECK_THROWS_AS(gp::rbf_kernel(a, wrong, ls, 2.0), Error);
}

TEST_CASE("kernel is symmetric positive semi-definite") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    const RowMatrix X = test::random_matrix(gen, 12, 3, -2, 2);
    const auto h = random_hyper(gen, 3);
    Matrix K = gp::rbf_kernel(X, X, h);
    CHECK((K - K.transpose()).norm() == 0.0);
    K.diagonal().array() += 1e-10;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(K);
    CHECK(eig.eigenvalues().minCoeff() >= 0.0);
  }
}

TEST_CASE("lml of a single point has the closed form") {
  RowMatrix X(1, 1);
  X << 0.3;
  Vector y(1);
  y << 1.7;
  const auto h = hyper(Vector::Ones(1), 0.8, 0.2);
  const double v = 1.0;
  const double expect = -0.5 * y(0) * y(0) / v - 0.5 * std::log(v) - 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(gp::log_marginal_likelihood(X, y, h).value == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("lml gradient matches central differences") {
  std::mt19937_64 gen(23);
  const RowMatrix X = test::random_matrix(gen, 8, 3, -1.5, 1.5);
  const auto h = random_hyper(gen, 3);
  const Vector y = sample_prior(gen, X, h);
  const auto r = gp::log_marginal_likelihood(X, y, h);
  const Vector p = h.pack();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector up = p, down = p;
    up(i) += 1e-5;
    down(i) -= 1e-5;
    const double fd = (gp::log_marginal_likelihood(X, y, gp::RbfHyperparams::unpack(up)).value -
                       gp::log_marginal_likelihood(X, y, gp::RbfHyperparams::unpack(down)).value) /
                      2e-5;
    CHECK(std::abs(fd - r.gradient(i)) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("exactly singular kernel exhausts the jitter ladder") {
  RowMatrix X(3, 2);
  X << 0.1, 0.2, 0.1, 0.2, 0.5, -0.3;
  Vector y(3);
  y << 1, 1.1, 0.4;
  // Duplicate rows with negligible noise; the signal variance dwarfs the largest jitter.
  const auto h = hyper(Vector::Ones(2), 1e16, 1e-300);
  try {
    gp::log_marginal_likelihood(X, y, h);
    FAIL("expected FactorizationFailed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FactorizationFailed);
  }
}

TEST_CASE("duplicate rows with a unit kernel are rescued by jitter") {
  RowMatrix X(2, 1);
  X << 0.5, 0.5;
  Matrix K = gp::rbf_kernel(X, X, hyper(Vector::Ones(1), 1.0, 1.0));
  const auto f = gp::factorize(K);
  CHECK(f.jitter > 0.0);
  CHECK(f.jitter <= 1e-4);
}

TEST_CASE("training with zero steps returns the initialization") {
  std::mt19937_64 gen(1);
  const RowMatrix X = test::random_matrix(gen, 20, 2);
  const Vector y = test::random_vector(gen, 20);
  gp::TrainConfig cfg;
  cfg.adam.steps = 0;
  const auto r = gp::optimize_hyperparams(X, y, cfg);
  const auto init = gp::RbfHyperparams::initial(2, true, 1.0, 1.0, 0.1);
  CHECK(r.hyper.pack() == init.pack());
}

TEST_CASE("training recovers lengthscales of data drawn from a known prior") {
  Vector truth(2);
  truth << 0.6, 1.8;
  const auto h_true = hyper(truth, 1.0, 0.01);
  int recovered = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 gen(100 + static_cast<std::uint64_t>(trial));
    const RowMatrix X = test::random_matrix(gen, 64, 2, -2.5, 2.5);
    const Vector y = sample_prior(gen, X, h_true);
    gp::TrainConfig cfg;
    cfg.n_max = 64;
    const auto r = gp::optimize_hyperparams(X, y, cfg);
    const Vector err = (r.hyper.log_lengthscales - h_true.log_lengthscales).cwiseAbs();
    if (err.maxCoeff() <= 0.5) ++recovered;
  }
  CHECK(recovered >= 7);
}

TEST_CASE("pure noise is explained by the noise variance") {
  std::mt19937_64 gen(77);
  const RowMatrix X = test::random_matrix(gen, 60, 2, -2, 2);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector y(60);
  for (auto& v : y) v = n(gen);
  gp::TrainConfig cfg;
  const auto r = gp::optimize_hyperparams(X, y, cfg);
  CHECK(r.hyper.signal_variance() / r.hyper.noise_variance() < 1.0);
}

TEST_CASE("adam returns the best iterate") {
  std::mt19937_64 gen(5);
  const RowMatrix X = test::random_matrix(gen, 30, 2, -2, 2);
  const Vector y = sample_prior(gen, X, hyper(Vector::Ones(2), 1.0, 0.05));
  gp::TrainConfig cfg;
  cfg.adam.steps = 60;
  const auto r = gp::optimize_hyperparams(X, y, cfg);
  REQUIRE(!r.lml_trace.empty());
  CHECK(r.best_lml == *std::max_element(r.lml_trace.begin(), r.lml_trace.end()));
  CHECK(gp::log_marginal_likelihood(X, y, r.hyper).value == doctest::Approx(r.best_lml).epsilon(1e-12));
}

TEST_CASE("strided subset") {
  const auto all = gp::strided_subset(10, 20, 4);
  CHECK(all.size() == 10);
  const auto a = gp::strided_subset(1000, 100, 9);
  const auto b = gp::strided_subset(1000, 100, 9);
  CHECK(a == b);
  CHECK(a.size() == 100);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i] - a[i - 1] == 10);
}

TEST_CASE("prediction limits") {
  std::mt19937_64 gen(31);
  const RowMatrix X = test::random_matrix(gen, 15, 2);
  const Vector y = test::random_vector(gen, 15);
  const auto h = hyper(Vector::Constant(2, 0.3), 1.5, 1e-8);
  const gp::GpModel m(X, y, h, {}, 1, 2);
  CHECK(m.reconstruction_error() <= 1e-8);

  const auto at_train = m.predict_normalized(X);
  for (Eigen::Index i = 0; i < 15; ++i) CHECK(at_train.mean(i) == doctest::Approx(y(i)).epsilon(1e-3));

  RowMatrix far(1, 2);
  far << 1e3, -1e3;
  const auto p = m.predict_normalized(far);
  CHECK(std::abs(p.mean(0)) < 1e-12);
  CHECK(p.variance(0) == doctest::Approx(1.5 + 1e-8).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 15; ++i) CHECK(at_train.variance(i) >= 0.0);

  RowMatrix wrong(1, 3);
  wrong.setZero();
  CHECK_THROWS_AS(m.predict_normalized(wrong), Error);
}

TEST_CASE("two-point prediction matches the hand-solved system") {
  RowMatrix X(2, 1);
  X << 0.0, 1.0;
  Vector y(2);
  y << 1.0, -0.5;
  const double sf = 1.3, sn = 0.2, l = 0.8;
  const gp::GpModel m(X, y, hyper(Vector::Constant(1, l), sf, sn), {}, 1, 1);

  const double k01 = sf * std::exp(-0.5 / (l * l));
  const double a = sf + sn, det = a * a - k01 * k01;
  // [a k01; k01 a]^-1 y
  const double w0 = (a * y(0) - k01 * y(1)) / det;
  const double w1 = (-k01 * y(0) + a * y(1)) / det;
  RowMatrix q(1, 1);
  q << 0.3;
  const double k0 = sf * std::exp(-0.5 * 0.09 / (l * l));
  const double k1 = sf * std::exp(-0.5 * 0.49 / (l * l));
  const double mean = k0 * w0 + k1 * w1;
  const double quad = (a * k0 * k0 - 2.0 * k01 * k0 * k1 + a * k1 * k1) / det;
  const double var = sf + sn - quad;

  const auto p = m.predict_normalized(q);
  CHECK(std::abs(p.mean(0) - mean) <= 1e-10);
  CHECK(std::abs(p.variance(0) - var) <= 1e-10);
}

TEST_CASE("prediction is invariant to the order of training rows") {
  std::mt19937_64 gen(41);
  const RowMatrix X = test::random_matrix(gen, 25, 3);
  const Vector y = test::random_vector(gen, 25);
  const auto h = random_hyper(gen, 3);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(25);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 25, gen);
  const gp::GpModel a(X, y, h, {}, 1, 3);
  const gp::GpModel b(RowMatrix(perm * X), Vector(perm * y), h, {}, 1, 3);
  const RowMatrix Q = test::random_matrix(gen, 30, 3);
  const auto pa = a.predict_normalized(Q);
  const auto pb = b.predict_normalized(Q);
  CHECK((pa.mean - pb.mean).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((pa.variance - pb.variance).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("median predictor") {
  std::mt19937_64 gen(43);
  const RowMatrix X = test::random_matrix(gen, 20, 2);
  const Vector y = test::random_vector(gen, 20);
  const gp::GpModel identity(X, y, hyper(Vector::Ones(2), 1.0, 0.1), {}, 1, 2);
  const RowMatrix Q = test::random_matrix(gen, 10, 2);
  CHECK(identity.median_predict(Q) == identity.predict_mean(Q));

  const auto m = small_surrogate();
  // g is Q^-1 of the mean, so it must be ordered like the mean.
  const auto* nox = &*m.transforms().nox;
  Vector means = Vector::LinSpaced(200, -4.0, 4.0);
  for (Eigen::Index i = 1; i < means.size(); ++i) CHECK(nox->inverse(means(i)) >= nox->inverse(means(i - 1)));
  CHECK(m.reconstruction_error() <= 1e-8);
}

TEST_CASE("median predictor interpolates a training point with tiny noise") {
  synth::SynthConfig sc;
  sc.duration_s = 120;
  sc.process_noise_std = 0.0;
  const auto ds = synth::generate_nominal(sc);
  gp::SurrogateConfig cfg;
  cfg.window_s = 1.0;
  cfg.train.adam.steps = 0;
  cfg.train.init_noise_variance = 1e-8;
  cfg.train.init_lengthscale = 0.3;
  const auto m = gp::fit_surrogate(ds, cfg, 0);
  const Vector g = m.median_predict(ds.inputs.topRows(10));
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(g(i) == doctest::Approx(ds.nox(i)).epsilon(1e-3));
}

TEST_CASE("serialization is deterministic and round-trips") {
  const auto a = small_surrogate();
  const auto b = small_surrogate();
  const std::string text = gp::serialize(a, R"({"k":1})");
  CHECK(text == gp::serialize(b, R"({"k":1})"));

  const auto loaded = gp::deserialize(text);
  CHECK(loaded.provenance_json == R"({"k":1})");
  std::mt19937_64 gen(2);
  const RowMatrix raw = test::random_matrix(gen, 30, 5, 0.0, 1.0);
  RowMatrix physical(30, 5);
  for (Eigen::Index j = 0; j < 5; ++j) {
    const auto r = synth::channel_range(j);
    physical.col(j) = (raw.col(j).array() * (r.hi - r.lo) + r.lo).matrix();
  }
  CHECK(loaded.model.median_predict_sequence(physical) == a.median_predict_sequence(physical));
  CHECK(gp::serialize(loaded.model, loaded.provenance_json) == text);

  CHECK_THROWS_AS(gp::deserialize("{}"), Error);
  CHECK_THROWS_AS(gp::deserialize("not json"), Error);
}
