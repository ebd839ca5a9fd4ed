#include "xcal/data.hpp"

#include "xcal/io.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace xcal {

std::vector<bool> Schema::measured_mask() const {
  std::vector<bool> mask;
  mask.reserve(channels.size());
  for (const auto& c : channels) mask.push_back(c.role == ChannelRole::Measured);
  return mask;
}

void Schema::validate() const {
  std::set<std::string> seen;
  for (const auto& c : channels) {
    if (c.name.empty()) throw Error(ErrorCode::InvalidConfig, "empty channel name");
    if (c.name == "time_s" || c.name == "nox") {
      throw Error(ErrorCode::InvalidConfig, "reserved channel name '" + c.name + "'");
    }
    if (!seen.insert(c.name).second) {
      throw Error(ErrorCode::InvalidConfig, "duplicate channel name '" + c.name + "'");
    }
  }
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw Error(ErrorCode::InvalidConfig, "sample rate must be positive");
  }
}

double EngineDataset::time_step() const {
  if (time.size() < 2) return 1.0;
  return (time(time.size() - 1) - time(0)) / static_cast<double>(time.size() - 1);
}

void validate(const EngineDataset& ds, std::size_t expected_channels) {
  const Eigen::Index T = ds.time.size();
  if (T == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no rows");
  if (ds.inputs.rows() != T || ds.nox.size() != T) {
    throw Error(ErrorCode::DimensionMismatch, "time, inputs and nox lengths differ");
  }
  if (static_cast<std::size_t>(ds.inputs.cols()) != expected_channels) {
    throw Error(ErrorCode::DimensionMismatch, "input column count does not match the schema");
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!std::isfinite(ds.time(t)) || !std::isfinite(ds.nox(t)) || !ds.inputs.row(t).allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "non-finite value in row " + std::to_string(t), t);
    }
    if (t > 0 && !(ds.time(t) > ds.time(t - 1))) {
      throw Error(ErrorCode::NonMonotoneTime, "time not strictly increasing at row " + std::to_string(t), t);
    }
  }
  if (T > 2) {
    const double step = ds.time_step();
    for (Eigen::Index t = 1; t < T; ++t) {
      const double dt = ds.time(t) - ds.time(t - 1);
      if (std::abs(dt - step) > 1e-9 * std::abs(step) + 1e-12 * std::abs(ds.time(t))) {
        throw Error(ErrorCode::NonMonotoneTime, "non-uniform time step at row " + std::to_string(t), t);
      }
    }
  }
}

EngineDataset slice_rows(const EngineDataset& ds, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > ds.length()) {
    throw Error(ErrorCode::DimensionMismatch, "row slice out of range");
  }
  EngineDataset out;
  out.engine_id = ds.engine_id;
  out.cycle_id = ds.cycle_id;
  out.time = ds.time.segment(begin, count);
  out.inputs = ds.inputs.middleRows(begin, count);
  out.nox = ds.nox.segment(begin, count);
  return out;
}

SelectionMatrix::SelectionMatrix(std::vector<bool> mask) : mask_(std::move(mask)) {
  for (std::size_t j = 0; j < mask_.size(); ++j) {
    if (mask_[j]) measured_.push_back(static_cast<Eigen::Index>(j));
  }
}

Matrix SelectionMatrix::dense() const {
  Matrix S = Matrix::Zero(d(), d_nc());
  for (Eigen::Index k = 0; k < d_nc(); ++k) S(measured_[static_cast<std::size_t>(k)], k) = 1.0;
  return S;
}

Vector SelectionMatrix::embed(const Vector& b) const {
  if (b.size() != d_nc()) {
    throw Error(ErrorCode::DimensionMismatch,
                "bias has " + std::to_string(b.size()) + " entries, expected " + std::to_string(d_nc()));
  }
  Vector full = Vector::Zero(d());
  for (Eigen::Index k = 0; k < d_nc(); ++k) full(measured_[static_cast<std::size_t>(k)]) = b(k);
  return full;
}

Vector apply_bias(const Vector& x, const SelectionMatrix& sel, const Vector& b) {
  if (x.size() != sel.d()) throw Error(ErrorCode::DimensionMismatch, "input width does not match selection");
  Vector out = x;
  const auto& idx = sel.measured_indices();
  if (b.size() != sel.d_nc()) throw Error(ErrorCode::DimensionMismatch, "bias length does not match selection");
  for (std::size_t k = 0; k < idx.size(); ++k) out(idx[k]) -= b(static_cast<Eigen::Index>(k));
  return out;
}

RowMatrix apply_bias(const RowMatrix& inputs, const SelectionMatrix& sel, const Vector& b) {
  if (inputs.cols() != sel.d()) throw Error(ErrorCode::DimensionMismatch, "input width does not match selection");
  if (b.size() != sel.d_nc()) throw Error(ErrorCode::DimensionMismatch, "bias length does not match selection");
  RowMatrix out = inputs;
  const auto& idx = sel.measured_indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.col(idx[k]).array() -= b(static_cast<Eigen::Index>(k));
  }
  return out;
}

Eigen::Index window_samples(double window_s, double sample_rate_hz) {
  const double w = window_s * sample_rate_hz;
  const double rounded = std::round(w);
  if (!std::isfinite(w) || std::abs(w - rounded) > 1e-9 * std::max(1.0, std::abs(w)) || rounded < 1.0) {
    throw Error(ErrorCode::NonIntegerWindow, "window of " + io::format_double(window_s) +
                                                 " s is not a positive whole number of samples");
  }
  return static_cast<Eigen::Index>(rounded);
}

RowMatrix stack_lags(const RowMatrix& inputs, Eigen::Index window) {
  const Eigen::Index T = inputs.rows();
  const Eigen::Index d = inputs.cols();
  if (window < 1) throw Error(ErrorCode::NonIntegerWindow, "window must be at least one sample");
  if (window > T) {
    throw Error(ErrorCode::WindowTooLong,
                "window of " + std::to_string(window) + " samples exceeds " + std::to_string(T) + " rows");
  }
  const Eigen::Index n = T - window + 1;
  RowMatrix rows(n, d * window);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index lag = 0; lag < window; ++lag) {
      rows.row(k).segment(lag * d, d) = inputs.row(k + lag);
    }
  }
  return rows;
}

WindowedInputs window_inputs(const EngineDataset& ds, double window_s, double sample_rate_hz) {
  WindowedInputs out;
  out.window = window_samples(window_s, sample_rate_hz);
  out.rows = stack_lags(ds.inputs, out.window);
  out.targets = ds.nox.tail(out.rows.rows());
  return out;
}

CalibrationSplit slice_calibration_window(const EngineDataset& ds, double warmup_s, double length_s) {
  if (ds.length() == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no rows");
  if (!(warmup_s >= 0.0) || !(length_s > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "warmup must be >= 0 and length > 0");
  }
  const double t0 = ds.time(0);
  const double duration = ds.time(ds.length() - 1) - t0;
  if (!(warmup_s + length_s < duration)) {
    throw Error(ErrorCode::WindowExceedsCycle, "warmup + calibration length must be shorter than the cycle");
  }
  // Tolerance absorbs decimal round-off in stored timestamps.
  const double tol = 1e-9 * std::max(1.0, std::abs(duration));
  Eigen::Index warm = 0;
  while (warm < ds.length() && ds.time(warm) - t0 <= warmup_s + tol) ++warm;
  Eigen::Index end = warm;
  while (end < ds.length() && ds.time(end) - t0 <= warmup_s + length_s + tol) ++end;
  if (end == warm || end == ds.length()) {
    throw Error(ErrorCode::WindowExceedsCycle, "calibration or holdout slice would be empty");
  }
  CalibrationSplit split;
  split.warmup_samples = warm;
  split.calibration = slice_rows(ds, warm, end - warm);
  split.holdout = slice_rows(ds, end, ds.length() - end);
  return split;
}

EngineDataset load_dataset(const std::filesystem::path& path, const Schema& schema, std::string engine_id,
                           std::string cycle_id) {
  const io::CsvTable table = io::read_csv(path);
  const long time_col = table.column("time_s");
  if (time_col < 0) throw Error(ErrorCode::MissingColumn, "time_s");
  const long nox_col = table.column("nox");
  if (nox_col < 0) throw Error(ErrorCode::MissingColumn, "nox");
  std::vector<long> channel_cols;
  for (const auto& c : schema.channels) {
    const long col = table.column(c.name);
    if (col < 0) throw Error(ErrorCode::MissingColumn, c.name);
    channel_cols.push_back(col);
  }
  if (table.rows.empty()) throw Error(ErrorCode::EmptyDataset, path.string() + " has no data rows");

  const auto T = static_cast<Eigen::Index>(table.rows.size());
  const auto d = static_cast<Eigen::Index>(schema.size());
  EngineDataset ds;
  ds.engine_id = engine_id.empty() ? path.stem().string() : std::move(engine_id);
  ds.cycle_id = std::move(cycle_id);
  ds.time.resize(T);
  ds.inputs.resize(T, d);
  ds.nox.resize(T);

  auto cell = [&](Eigen::Index row, long col, const std::string& name) {
    const auto& fields = table.rows[static_cast<std::size_t>(row)];
    if (col >= static_cast<long>(fields.size())) {
      throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(row) + " column " + name + " is missing", row);
    }
    const auto v = io::parse_double(fields[static_cast<std::size_t>(col)]);
    if (!v || !std::isfinite(*v)) {
      throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(row) + " column " + name, row);
    }
    return *v;
  };
  for (Eigen::Index t = 0; t < T; ++t) {
    ds.time(t) = cell(t, time_col, "time_s");
    for (Eigen::Index j = 0; j < d; ++j) {
      ds.inputs(t, j) = cell(t, channel_cols[static_cast<std::size_t>(j)], schema.channels[static_cast<std::size_t>(j)].name);
    }
    ds.nox(t) = cell(t, nox_col, "nox");
  }
  validate(ds, schema.size());
  return ds;
}

void write_dataset(const std::filesystem::path& path, const EngineDataset& ds, const Schema& schema) {
  if (static_cast<std::size_t>(ds.channels()) != schema.size()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset width does not match schema");
  }
  std::ostringstream out;
  out << "time_s";
  for (const auto& c : schema.channels) out << ',' << c.name;
  out << ",nox\n";
  for (Eigen::Index t = 0; t < ds.length(); ++t) {
    out << io::format_double(ds.time(t));
    for (Eigen::Index j = 0; j < ds.channels(); ++j) out << ',' << io::format_double(ds.inputs(t, j));
    out << ',' << io::format_double(ds.nox(t)) << '\n';
  }
  io::write_text(path, out.str());
}

}  // namespace xcal
