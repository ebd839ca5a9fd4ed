#pragma once

#include "xcal/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xcal {

enum class ChannelRole { Control, Measured };

struct ChannelSpec {
  std::string name;
  ChannelRole role = ChannelRole::Control;
  std::string units;
};

/// Ordered channel list plus the common sample rate of every channel.
struct Schema {
  std::vector<ChannelSpec> channels;
  double sample_rate_hz = 1.0;

  std::size_t size() const { return channels.size(); }
  std::vector<bool> measured_mask() const;
  /// Throws InvalidConfig on duplicate names or a non-positive rate.
  void validate() const;
};

/// One engine running one cycle. Row t of `inputs` is the input vector at `time[t]`.
struct EngineDataset {
  std::string engine_id;
  std::string cycle_id;
  Vector time;
  RowMatrix inputs;
  Vector nox;

  Eigen::Index length() const { return time.size(); }
  Eigen::Index channels() const { return inputs.cols(); }
  double time_step() const;
};

/// Checks the dataset invariants (finite values, uniform increasing time, shapes).
void validate(const EngineDataset& ds, std::size_t expected_channels);

/// Contiguous rows [begin, begin + count) of a dataset.
EngineDataset slice_rows(const EngineDataset& ds, Eigen::Index begin, Eigen::Index count);

/// Embeds a d_nc bias vector into the d input channels: column k of S has its one
/// at the k-th measured channel.
class SelectionMatrix {
 public:
  SelectionMatrix() = default;
  explicit SelectionMatrix(std::vector<bool> mask);

  Eigen::Index d() const { return static_cast<Eigen::Index>(mask_.size()); }
  Eigen::Index d_nc() const { return static_cast<Eigen::Index>(measured_.size()); }
  const std::vector<bool>& mask() const { return mask_; }
  const std::vector<Eigen::Index>& measured_indices() const { return measured_; }

  Matrix dense() const;
  /// S * b without materializing S.
  Vector embed(const Vector& b) const;

 private:
  std::vector<bool> mask_;
  std::vector<Eigen::Index> measured_;
};

/// x - S b for a single input vector.
Vector apply_bias(const Vector& x, const SelectionMatrix& sel, const Vector& b);
/// x_t - S b for every row of an input matrix.
RowMatrix apply_bias(const RowMatrix& inputs, const SelectionMatrix& sel, const Vector& b);

struct WindowedInputs {
  RowMatrix rows;
  Vector targets;
  Eigen::Index window = 1;
};

/// Number of samples spanned by a window of `window_s` seconds.
Eigen::Index window_samples(double window_s, double sample_rate_hz);

/// Lag-stacks raw inputs: row k is (x_k, x_{k+1}, ..., x_{k+W-1}), so column
/// lag * d + channel holds `channel` at sample k + lag.
RowMatrix stack_lags(const RowMatrix& inputs, Eigen::Index window);

/// Windowed rows with the target at the window end (causal alignment).
WindowedInputs window_inputs(const EngineDataset& ds, double window_s, double sample_rate_hz = 1.0);

struct CalibrationSplit {
  EngineDataset calibration;
  EngineDataset holdout;
  Eigen::Index warmup_samples = 0;
};

/// Drops the warmup, keeps (warmup, warmup + length] seconds (relative to the
/// first timestamp) for calibration and everything after it as holdout.
CalibrationSplit slice_calibration_window(const EngineDataset& ds, double warmup_s, double length_s);

/// Reads the `time_s, <channels...>, nox` CSV format. Columns are matched by header
/// name; the result follows schema order.
EngineDataset load_dataset(const std::filesystem::path& path, const Schema& schema,
                           std::string engine_id = {}, std::string cycle_id = {});

void write_dataset(const std::filesystem::path& path, const EngineDataset& ds, const Schema& schema);

}  // namespace xcal
