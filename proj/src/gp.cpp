#include "xcal/gp.hpp"

#include "xcal/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace xcal::gp {

using json = nlohmann::json;

RbfHyperparams RbfHyperparams::initial(Eigen::Index dims, bool ard, double lengthscale, double signal_variance,
                                       double noise_variance) {
  RbfHyperparams h;
  h.log_lengthscales = Vector::Constant(ard ? dims : 1, std::log(lengthscale));
  h.log_signal_variance = std::log(signal_variance);
  h.log_noise_variance = std::log(noise_variance);
  return h;
}

Vector RbfHyperparams::lengthscales(Eigen::Index dims) const {
  if (log_lengthscales.size() == 1) return Vector::Constant(dims, std::exp(log_lengthscales(0)));
  if (log_lengthscales.size() != dims) {
    throw Error(ErrorCode::DimensionMismatch, "lengthscale count does not match input width");
  }
  return log_lengthscales.array().exp().matrix();
}

Vector RbfHyperparams::pack() const {
  Vector p(parameter_count());
  p.head(log_lengthscales.size()) = log_lengthscales;
  p(log_lengthscales.size()) = log_signal_variance;
  p(log_lengthscales.size() + 1) = log_noise_variance;
  return p;
}

RbfHyperparams RbfHyperparams::unpack(const Vector& packed) {
  if (packed.size() < 3) throw Error(ErrorCode::DimensionMismatch, "packed hyperparameters too short");
  RbfHyperparams h;
  const Eigen::Index n = packed.size() - 2;
  h.log_lengthscales = packed.head(n);
  h.log_signal_variance = packed(n);
  h.log_noise_variance = packed(n + 1);
  return h;
}

Factorization factorize(const Matrix& K_noisy) {
  static constexpr double kLadder[] = {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4};
  const Eigen::Index n = K_noisy.rows();
  for (double jitter : kLadder) {
    Factorization f;
    f.jitter = jitter;
    if (jitter == 0.0) {
      f.llt.compute(K_noisy);
    } else {
      f.llt.compute(K_noisy + jitter * Matrix::Identity(n, n));
    }
    if (f.llt.info() == Eigen::Success) {
      const auto diag = f.llt.matrixLLT().diagonal();
      if (diag.allFinite() && (diag.array() > 0.0).all()) return f;
    }
  }
  throw Error(ErrorCode::FactorizationFailed, "kernel matrix is not positive definite after jitter 1e-4");
}

namespace {

Matrix noisy_kernel(const RowMatrix& X, const RbfHyperparams& h) {
  Matrix K = rbf_kernel(X, X, h);
  K.diagonal().array() += h.noise_variance();
  return K;
}

void check_hyper(const RbfHyperparams& h, Eigen::Index width) {
  if (h.log_lengthscales.size() != width && h.log_lengthscales.size() != 1) {
    throw Error(ErrorCode::DimensionMismatch, "lengthscale count does not match input width");
  }
  if (!h.pack().allFinite()) throw Error(ErrorCode::InvalidConfig, "non-finite hyperparameters");
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace

LmlResult log_marginal_likelihood(const RowMatrix& X, const Vector& y, const RbfHyperparams& h) {
  if (X.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "inputs and targets differ in length");
  check_hyper(h, X.cols());
  const Eigen::Index n = X.rows();
  const Eigen::Index D = X.cols();

  Matrix Kf = rbf_kernel(X, X, h);
  Matrix Ky = Kf;
  Ky.diagonal().array() += h.noise_variance();
  const Factorization f = factorize(Ky);
  const Vector alpha = f.llt.solve(y);
  const double log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();

  LmlResult out;
  out.value = -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(n) * kLog2Pi;

  // dL/dtheta = 1/2 tr((alpha alpha^T - Ky^{-1}) dK/dtheta)
  Matrix W = alpha * alpha.transpose() - f.llt.solve(Matrix::Identity(n, n));
  const Matrix WK = W.cwiseProduct(Kf);
  const Vector ls = h.lengthscales(D);

  out.gradient.resize(h.parameter_count());
  const Eigen::Index n_ls = h.log_lengthscales.size();
  out.gradient.head(n_ls).setZero();
  for (Eigen::Index j = 0; j < D; ++j) {
    const double inv_l2 = 1.0 / (ls(j) * ls(j));
    double acc = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      for (Eigen::Index a = 0; a < n; ++a) {
        const double diff = X(a, j) - X(b, j);
        acc += WK(a, b) * diff * diff;
      }
    }
    out.gradient(n_ls == 1 ? 0 : j) += 0.5 * acc * inv_l2;
  }
  out.gradient(n_ls) = 0.5 * WK.sum();
  out.gradient(n_ls + 1) = 0.5 * h.noise_variance() * W.trace();
  return out;
}

std::vector<Eigen::Index> strided_subset(Eigen::Index rows, std::size_t n_max, std::uint64_t seed) {
  std::vector<Eigen::Index> idx;
  if (n_max == 0 || static_cast<std::size_t>(rows) <= n_max) {
    idx.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  const double step = static_cast<double>(rows) / static_cast<double>(n_max);
  const double phase = static_cast<double>(seed % 1024) / 1024.0;
  idx.reserve(n_max);
  for (std::size_t i = 0; i < n_max; ++i) {
    const auto k = static_cast<Eigen::Index>(std::floor((static_cast<double>(i) + phase) * step));
    idx.push_back(std::min(k, rows - 1));
  }
  return idx;
}

TrainResult optimize_hyperparams(const RowMatrix& X, const Vector& y, const TrainConfig& cfg) {
  if (X.rows() < 2) throw Error(ErrorCode::TooFewValues, "GP training needs at least two rows");
  const AdamConfig& adam = cfg.adam;
  RbfHyperparams h = RbfHyperparams::initial(X.cols(), cfg.ard, cfg.init_lengthscale, cfg.init_signal_variance,
                                             cfg.init_noise_variance);
  TrainResult result;
  result.hyper = h;
  if (adam.steps <= 0) return result;

  const double scale = 1.0 / static_cast<double>(X.rows());
  Vector theta = h.pack();
  Vector m = Vector::Zero(theta.size());
  Vector v = Vector::Zero(theta.size());
  double best = -std::numeric_limits<double>::infinity();
  for (int step = 0; step <= adam.steps; ++step) {
    const LmlResult lml = log_marginal_likelihood(X, y, RbfHyperparams::unpack(theta));
    result.lml_trace.push_back(lml.value);
    if (lml.value > best && std::isfinite(lml.value)) {
      best = lml.value;
      result.best_lml = lml.value;
      result.best_step = step;
      result.hyper = RbfHyperparams::unpack(theta);
    }
    if (step == adam.steps) break;
    // Minimize -LML / N.
    const Vector g = -scale * lml.gradient;
    m = adam.beta1 * m + (1.0 - adam.beta1) * g;
    v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(adam.beta1, step + 1);
    const double c2 = 1.0 - std::pow(adam.beta2, step + 1);
    theta.array() -= adam.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + adam.epsilon);
  }
  return result;
}

GpModel::GpModel(RowMatrix train_inputs, Vector train_targets, RbfHyperparams hyper, Transforms transforms,
                 Eigen::Index window, Eigen::Index channels)
    : X_(std::move(train_inputs)),
      y_(std::move(train_targets)),
      hyper_(std::move(hyper)),
      transforms_(std::move(transforms)),
      window_(window),
      channels_(channels) {
  if (X_.rows() != y_.size()) throw Error(ErrorCode::DimensionMismatch, "inputs and targets differ in length");
  if (X_.rows() < 1) throw Error(ErrorCode::TooFewValues, "GP needs at least one training row");
  if (window_ < 1 || channels_ < 1 || window_ * channels_ != X_.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "training width must equal window * channels");
  }
  if (!transforms_.inputs.empty() && static_cast<Eigen::Index>(transforms_.inputs.size()) != channels_) {
    throw Error(ErrorCode::DimensionMismatch, "one input transform per channel expected");
  }
  check_hyper(hyper_, X_.cols());
  fact_ = factorize(noisy_kernel(X_, hyper_));
  alpha_ = fact_.llt.solve(y_);
  inv_lengthscales_ = hyper_.lengthscales(X_.cols()).cwiseInverse();
  X_scaled_ = X_ * inv_lengthscales_.asDiagonal();
  X_sqnorm_ = X_scaled_.rowwise().squaredNorm();
}

double GpModel::reconstruction_error() const {
  Matrix Ky = noisy_kernel(X_, hyper_);
  Ky.diagonal().array() += fact_.jitter;
  const Matrix L = fact_.llt.matrixL();
  return (L * L.transpose() - Ky).norm() / Ky.norm();
}

double GpModel::log_marginal_likelihood() const {
  const double log_det = 2.0 * fact_.llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * y_.dot(alpha_) - 0.5 * log_det - 0.5 * static_cast<double>(y_.size()) * kLog2Pi;
}

Matrix GpModel::cross_kernel(const RowMatrix& Xq) const {
  if (Xq.cols() != X_.cols()) throw Error(ErrorCode::DimensionMismatch, "query width does not match training width");
  const RowMatrix Q = Xq * inv_lengthscales_.asDiagonal();
  const Vector q_sqnorm = Q.rowwise().squaredNorm();
  Matrix sq = (-2.0 * Q) * X_scaled_.transpose();
  sq.colwise() += q_sqnorm;
  sq.rowwise() += X_sqnorm_.transpose();
  const double sf = hyper_.signal_variance();
  return sq.unaryExpr([sf](double s) { return sf * std::exp(-0.5 * std::max(s, 0.0)); });
}

Vector GpModel::predict_mean(const RowMatrix& Xq) const { return cross_kernel(Xq) * alpha_; }

Prediction GpModel::predict_normalized(const RowMatrix& Xq) const {
  const Matrix Ks = cross_kernel(Xq);
  Prediction p;
  p.mean = Ks * alpha_;
  const Matrix V = fact_.llt.matrixL().solve(Ks.transpose());
  p.variance = (hyper_.signal_variance() + hyper_.noise_variance()) - V.colwise().squaredNorm().transpose().array();
  for (Eigen::Index i = 0; i < p.variance.size(); ++i) {
    if (p.variance(i) < 0.0) {
      p.variance(i) = 0.0;
      ++p.clamped;
    }
  }
  return p;
}

RowMatrix GpModel::normalize_channels(const RowMatrix& raw) const {
  if (raw.cols() != channels_) throw Error(ErrorCode::DimensionMismatch, "raw input width does not match channels");
  if (transforms_.inputs.empty()) return raw;
  RowMatrix out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < channels_; ++j) {
    const auto& t = transforms_.inputs[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < raw.rows(); ++r) out(r, j) = t.forward(raw(r, j));
  }
  return out;
}

RowMatrix GpModel::normalize_windowed(const RowMatrix& rows) const {
  if (rows.cols() != X_.cols()) throw Error(ErrorCode::DimensionMismatch, "query width does not match training width");
  if (transforms_.inputs.empty()) return rows;
  RowMatrix out(rows.rows(), rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const auto& t = transforms_.inputs[static_cast<std::size_t>(c % channels_)];
    for (Eigen::Index r = 0; r < rows.rows(); ++r) out(r, c) = t.forward(rows(r, c));
  }
  return out;
}

double GpModel::denormalize_nox(double z) const { return transforms_.nox ? transforms_.nox->inverse(z) : z; }
double GpModel::normalize_nox(double y) const { return transforms_.nox ? transforms_.nox->forward(y) : y; }

Vector GpModel::median_predict(const RowMatrix& physical_rows) const {
  // The normalized predictive is Gaussian, so its median is the mean; the
  // inverse transform is monotone and carries the median through.
  Vector mean = predict_mean(normalize_windowed(physical_rows));
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean(i) = denormalize_nox(mean(i));
  return mean;
}

Vector GpModel::median_predict_sequence(const RowMatrix& raw_inputs) const {
  // Transforms act per channel, so normalizing before lag-stacking is equivalent.
  Vector mean = predict_mean(stack_lags(normalize_channels(raw_inputs), window_));
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean(i) = denormalize_nox(mean(i));
  return mean;
}

GpModel train(const WindowedInputs& normalized, const TrainConfig& cfg, std::uint64_t seed, Transforms transforms,
              Eigen::Index channels) {
  const auto idx = strided_subset(normalized.rows.rows(), cfg.n_max, seed);
  RowMatrix X(static_cast<Eigen::Index>(idx.size()), normalized.rows.cols());
  Vector y(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = normalized.rows.row(idx[i]);
    y(static_cast<Eigen::Index>(i)) = normalized.targets(idx[i]);
  }
  const TrainResult fit = optimize_hyperparams(X, y, cfg);
  return GpModel(std::move(X), std::move(y), fit.hyper, std::move(transforms), normalized.window, channels);
}

GpModel fit_surrogate(const EngineDataset& nominal, const SurrogateConfig& cfg, std::uint64_t seed) {
  validate(nominal, static_cast<std::size_t>(nominal.channels()));
  Transforms transforms;
  if (cfg.transform_inputs) {
    for (Eigen::Index j = 0; j < nominal.channels(); ++j) {
      const Vector col = nominal.inputs.col(j);
      transforms.inputs.push_back(QuantileTransform::fit(col, cfg.n_quantiles));
    }
  }
  transforms.nox = QuantileTransform::fit(nominal.nox, cfg.n_quantiles);

  EngineDataset normalized = nominal;
  for (Eigen::Index j = 0; j < nominal.channels() && cfg.transform_inputs; ++j) {
    const auto& t = transforms.inputs[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < nominal.length(); ++r) normalized.inputs(r, j) = t.forward(nominal.inputs(r, j));
  }
  for (Eigen::Index r = 0; r < nominal.length(); ++r) normalized.nox(r) = transforms.nox->forward(nominal.nox(r));

  const WindowedInputs windows = window_inputs(normalized, cfg.window_s, cfg.sample_rate_hz);
  return train(windows, cfg.train, seed, std::move(transforms), nominal.channels());
}

namespace {

json transform_to_json(const QuantileTransform& t) {
  return json{{"probe_points", t.probe_points()}, {"reference_quantiles", t.reference_quantiles()}};
}

QuantileTransform transform_from_json(const json& j) {
  return QuantileTransform::from_arrays(j.at("probe_points").get<std::vector<double>>(),
                                        j.at("reference_quantiles").get<std::vector<double>>());
}

json vector_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string serialize(const GpModel& model, const std::string& provenance_json) {
  json j;
  j["format"] = "xcal-gp-model";
  j["format_version"] = kModelFormatVersion;
  j["provenance"] = json::parse(provenance_json);
  j["window"] = model.window();
  j["channels"] = model.channels();
  const auto& h = model.hyper();
  j["hyper"] = {{"log_lengthscales", vector_to_json(h.log_lengthscales)},
                {"log_signal_variance", h.log_signal_variance},
                {"log_noise_variance", h.log_noise_variance}};
  json rows = json::array();
  for (Eigen::Index r = 0; r < model.train_inputs().rows(); ++r) {
    rows.push_back(vector_to_json(model.train_inputs().row(r).transpose()));
  }
  j["train_inputs"] = std::move(rows);
  j["train_targets"] = vector_to_json(model.train_targets());
  json inputs = json::array();
  for (const auto& t : model.transforms().inputs) inputs.push_back(transform_to_json(t));
  j["transforms"] = {{"inputs", std::move(inputs)},
                     {"nox", model.transforms().nox ? transform_to_json(*model.transforms().nox) : json(nullptr)}};
  return j.dump(1) + "\n";
}

LoadedModel deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("model artifact is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "xcal-gp-model") throw Error(ErrorCode::Io, "not a model artifact");
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorCode::Io, "unsupported model format version");
    }
    RbfHyperparams h;
    h.log_lengthscales = vector_from_json(j.at("hyper").at("log_lengthscales"));
    h.log_signal_variance = j.at("hyper").at("log_signal_variance").get<double>();
    h.log_noise_variance = j.at("hyper").at("log_noise_variance").get<double>();
    const auto& rows = j.at("train_inputs");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto window = j.at("window").get<Eigen::Index>();
    const auto channels = j.at("channels").get<Eigen::Index>();
    RowMatrix X(n, window * channels);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Vector row = vector_from_json(rows.at(static_cast<std::size_t>(r)));
      if (row.size() != X.cols()) throw Error(ErrorCode::Io, "training row width mismatch");
      X.row(r) = row.transpose();
    }
    Vector y = vector_from_json(j.at("train_targets"));
    Transforms t;
    for (const auto& tj : j.at("transforms").at("inputs")) t.inputs.push_back(transform_from_json(tj));
    const auto& nox = j.at("transforms").at("nox");
    if (!nox.is_null()) t.nox = transform_from_json(nox);

    LoadedModel out{GpModel(std::move(X), std::move(y), std::move(h), std::move(t), window, channels),
                    j.at("provenance").dump()};
    if (const double err = out.model.reconstruction_error(); !(err <= 1e-8)) {
      throw Error(ErrorCode::Io, "factorization does not reconstruct the kernel (rel err " + io::format_double(err) + ")");
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed model artifact: ") + e.what());
  }
}

}  // namespace xcal::gp
