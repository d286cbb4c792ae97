#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atypicalib {

// Dense types. Storage is row-major so a matrix maps 1:1 onto the on-disk
// payload and each sample is a contiguous row.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = RowMatrix<double>;
using VectorXd = Vector<double>;
using Index = Eigen::Index;

using Labels = std::vector<std::uint32_t>;

// Error hierarchy. Every error raised by the library derives from Error so
// callers (the CLI in particular) can map them onto exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed file header or unparseable token.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Inconsistent dimensions between inputs.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Non-finite or out-of-domain values.
class DataError : public Error {
public:
  using Error::Error;
};

/// A fitting procedure could not produce a model (empty class, one sample...).
class FitError : public Error {
public:
  using Error::Error;
};

/// Factorization breakdown or similar numerical failure.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Invalid argument supplied by the caller (alpha outside (0,1), K < 1...).
class ArgumentError : public Error {
public:
  using Error::Error;
};

/// File missing, unreadable or unwritable.
class IoError : public Error {
public:
  using Error::Error;
};

/// Logistic MLE does not exist on this sample.
class SeparationError : public Error {
public:
  using Error::Error;
};

using WarningHandler = std::function<void(const std::string &)>;

inline WarningHandler &warning_handler() {
  static WarningHandler handler = [](const std::string &msg) { std::cerr << "warning: " << msg << '\n'; };
  return handler;
}

/// Non-fatal diagnostics (small samples, fallbacks). Defaults to stderr.
inline void warn(const std::string &message) {
  if (warning_handler()) {
    warning_handler()(message);
  }
}

} // namespace atypicalib
