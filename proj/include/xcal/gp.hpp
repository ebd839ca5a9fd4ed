#pragma once

#include "xcal/data.hpp"
#include "xcal/transform.hpp"
#include "xcal/types.hpp"

#include <Eigen/Cholesky>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace xcal::gp {

/// RBF kernel parameters, stored as logs. A single log-lengthscale means an
/// isotropic kernel; otherwise there is one per input dimension (ARD).
struct RbfHyperparams {
  Vector log_lengthscales;
  double log_signal_variance = 0.0;
  double log_noise_variance = 0.0;

  static RbfHyperparams initial(Eigen::Index dims, bool ard = true, double lengthscale = 1.0,
                                double signal_variance = 1.0, double noise_variance = 0.1);

  Vector lengthscales(Eigen::Index dims) const;
  double signal_variance() const { return std::exp(log_signal_variance); }
  double noise_variance() const { return std::exp(log_noise_variance); }
  bool ard() const { return log_lengthscales.size() != 1; }

  /// (log lengthscales..., log signal variance, log noise variance)
  Vector pack() const;
  static RbfHyperparams unpack(const Vector& packed);
  Eigen::Index parameter_count() const { return log_lengthscales.size() + 2; }
};

/// k(a, b) = signal_variance * exp(-1/2 sum_j ((a_j - b_j) / l_j)^2).
/// `lengthscales` has one entry per column (or a single shared entry).
template <typename Derived1, typename Derived2, typename Derived3>
MatrixX<typename Derived1::Scalar> rbf_kernel(const Eigen::MatrixBase<Derived1>& X1,
                                              const Eigen::MatrixBase<Derived2>& X2,
                                              const Eigen::MatrixBase<Derived3>& lengthscales,
                                              typename Derived1::Scalar signal_variance) {
  using Scalar = typename Derived1::Scalar;
  if (X1.cols() != X2.cols()) throw Error(ErrorCode::DimensionMismatch, "kernel inputs differ in width");
  if (lengthscales.size() != X1.cols() && lengthscales.size() != 1) {
    throw Error(ErrorCode::DimensionMismatch, "lengthscale count does not match input width");
  }
  VectorX<Scalar> inv = lengthscales.size() == 1
                            ? VectorX<Scalar>::Constant(X1.cols(), Scalar(1) / lengthscales(0))
                            : VectorX<Scalar>(lengthscales.cwiseInverse());
  MatrixX<Scalar> K(X1.rows(), X2.rows());
  for (Eigen::Index a = 0; a < X1.rows(); ++a) {
    for (Eigen::Index b = 0; b < X2.rows(); ++b) {
      const Scalar sq = ((X1.row(a) - X2.row(b)).transpose().cwiseProduct(inv)).squaredNorm();
      K(a, b) = signal_variance * std::exp(Scalar(-0.5) * sq);
    }
  }
  return K;
}

template <typename Derived1, typename Derived2>
MatrixX<typename Derived1::Scalar> rbf_kernel(const Eigen::MatrixBase<Derived1>& X1,
                                              const Eigen::MatrixBase<Derived2>& X2, const RbfHyperparams& h) {
  return rbf_kernel(X1, X2, h.lengthscales(X1.cols()), h.signal_variance());
}

/// Cholesky of K + (noise + jitter) I, escalating jitter 0, 1e-8, ..., 1e-4.
struct Factorization {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

Factorization factorize(const Matrix& K_noisy);

struct LmlResult {
  double value = 0.0;
  Vector gradient;  // w.r.t. RbfHyperparams::pack()
};

/// Exact log marginal likelihood of zero-mean GP regression and its gradient in
/// log-hyperparameters (trace identity).
LmlResult log_marginal_likelihood(const RowMatrix& X, const Vector& y, const RbfHyperparams& h);

struct AdamConfig {
  int steps = 500;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  bool ard = true;
  std::size_t n_max = 2000;
  double init_lengthscale = 1.0;
  double init_signal_variance = 1.0;
  double init_noise_variance = 0.1;
};

struct TrainResult {
  RbfHyperparams hyper;
  double best_lml = 0.0;
  int best_step = 0;
  std::vector<double> lml_trace;
};

/// Uniformly strided row subset of size min(rows, n_max); the seed picks the phase.
std::vector<Eigen::Index> strided_subset(Eigen::Index rows, std::size_t n_max, std::uint64_t seed);

/// Adam on the negative LML (per training point); returns the best iterate.
TrainResult optimize_hyperparams(const RowMatrix& X, const Vector& y, const TrainConfig& cfg);

/// Per-channel transforms. An empty `inputs` or absent `nox` means identity.
struct Transforms {
  std::vector<QuantileTransform> inputs;
  std::optional<QuantileTransform> nox;
};

struct Prediction {
  Vector mean;
  Vector variance;
  Eigen::Index clamped = 0;  // queries whose variance went negative and was clamped to 0
};

/// Trained exact GP over lag-stacked, normalized inputs with its normalization.
class GpModel {
 public:
  GpModel() = default;
  /// Factorizes and caches everything prediction needs.
  GpModel(RowMatrix train_inputs, Vector train_targets, RbfHyperparams hyper, Transforms transforms,
          Eigen::Index window, Eigen::Index channels);

  const RbfHyperparams& hyper() const { return hyper_; }
  const RowMatrix& train_inputs() const { return X_; }
  const Vector& train_targets() const { return y_; }
  const Transforms& transforms() const { return transforms_; }
  const Eigen::LLT<Matrix>& chol() const { return fact_.llt; }
  double jitter() const { return fact_.jitter; }
  const Vector& alpha() const { return alpha_; }
  Eigen::Index window() const { return window_; }
  Eigen::Index channels() const { return channels_; }
  Eigen::Index width() const { return X_.cols(); }

  /// ||L L^T - (K + (noise + jitter) I)||_F / ||K + (noise + jitter) I||_F
  double reconstruction_error() const;
  double log_marginal_likelihood() const;

  /// Posterior mean and predictive variance (noise included) at normalized queries.
  Prediction predict_normalized(const RowMatrix& Xq) const;
  /// Posterior mean only, at normalized queries.
  Vector predict_mean(const RowMatrix& Xq) const;

  /// Applies the per-channel input transforms to raw T x d inputs.
  RowMatrix normalize_channels(const RowMatrix& raw) const;
  /// Applies the per-channel transforms to lag-stacked physical rows.
  RowMatrix normalize_windowed(const RowMatrix& rows) const;
  double denormalize_nox(double z) const;
  double normalize_nox(double y) const;

  /// Physical-scale median predictor g on lag-stacked physical rows.
  Vector median_predict(const RowMatrix& physical_rows) const;
  /// g on the windows of a raw T x d input sequence (T - W + 1 outputs).
  Vector median_predict_sequence(const RowMatrix& raw_inputs) const;

 private:
  RowMatrix X_;
  Vector y_;
  RbfHyperparams hyper_;
  Transforms transforms_;
  Eigen::Index window_ = 1;
  Eigen::Index channels_ = 0;

  Factorization fact_;
  Vector alpha_;
  Vector inv_lengthscales_;
  RowMatrix X_scaled_;
  Vector X_sqnorm_;

  Matrix cross_kernel(const RowMatrix& Xq) const;
};

struct SurrogateConfig {
  double window_s = 5.0;
  double sample_rate_hz = 1.0;
  bool transform_inputs = true;
  std::size_t n_quantiles = 0;
  TrainConfig train;
};

/// Fits transforms on nominal data, windows, subsamples, optimizes and builds the model.
GpModel train(const WindowedInputs& normalized, const TrainConfig& cfg, std::uint64_t seed, Transforms transforms,
              Eigen::Index channels);
GpModel fit_surrogate(const EngineDataset& nominal, const SurrogateConfig& cfg, std::uint64_t seed);

/// Model artifact (JSON). `provenance` is an opaque JSON object text echoed into the file.
std::string serialize(const GpModel& model, const std::string& provenance_json = "{}");
struct LoadedModel {
  GpModel model;
  std::string provenance_json;
};
/// Re-derives the factorization and checks the reconstruction invariant.
LoadedModel deserialize(const std::string& text);

inline constexpr int kModelFormatVersion = 1;

}  // namespace xcal::gp
