#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace xcal {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
// Row-major so that a time sample is a contiguous row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  MissingColumn,
  NonMonotoneTime,
  NonFiniteValue,
  EmptyDataset,
  DimensionMismatch,
  WindowTooLong,
  NonIntegerWindow,
  WindowExceedsCycle,
  TooFewValues,
  FactorizationFailed,
  EmptySample,
  QOutOfRange,
  DegeneratePrior,
  NoSamplesAccepted,
  EmptyPosterior,
  InvalidConfig,
  Io,
  ProvenanceMismatch,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, long index = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  // Row (or similar position) the error refers to; -1 when not applicable.
  long index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  long index_;
};

}  // namespace xcal
