#pragma once

#include "atypicalib/core.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace atypicalib {

// ---------------------------------------------------------------------------
// Numerically stable row transforms
// ---------------------------------------------------------------------------

/// log(sum(exp(v))) with max subtraction. Returns -inf for an all -inf input.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived> &v) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = v.maxCoeff();
  if (!std::isfinite(peak)) {
    return peak;
  }
  return peak + std::log((v.derived().array() - peak).exp().sum());
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived> &logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar peak = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - peak).eval();
    out.row(i) = shifted - std::log(shifted.exp().sum());
  }
  return out;
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived> &logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar peak = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - peak).exp().eval();
    out.row(i) = e / e.sum();
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived> &row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) {
      best = j;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Dataset model
// ---------------------------------------------------------------------------

struct LabeledDataset {
  std::optional<Matrix> embeddings;     // N x d
  Matrix logits;                        // N x C
  Labels labels;                        // N
  std::optional<VectorXd> atypicality;  // N

  Index size() const { return logits.rows(); }
  Index n_classes() const { return logits.cols(); }

  /// Checks that all components agree on N and labels lie in [0, C).
  void validate() const;

  /// Sub-dataset made of the given rows, in the given order.
  LabeledDataset subset(const std::vector<Index> &rows) const;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<double> fractions;

  void validate() const;
};

/// Split sizes: floor(f_i * N) each, remaining samples handed one at a time to
/// the earliest splits.
std::vector<Index> split_sizes(Index n, const std::vector<double> &fractions);

/// Disjoint cover of [0, n) following `spec`. Indices are selected from a
/// seeded Fisher-Yates shuffle and returned sorted within each part.
std::vector<std::vector<Index>> split_indices(Index n, const SplitSpec &spec);

std::vector<LabeledDataset> split(const LabeledDataset &dataset, const SplitSpec &spec);

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

enum class FileFormat { binary, csv, automatic };

/// Binary matrix layout (little-endian):
///   "ATYM" | u16 version=1 | u16 flags=0 | u32 rows | u32 cols | f64[rows*cols]
inline constexpr std::size_t kMatrixHeaderBytes = 16;
/// Binary labels layout: "ATYL" | u16 version=1 | u16 pad | u32 N | u32[N]
inline constexpr std::size_t kLabelsHeaderBytes = 12;

/// `automatic` sniffs the magic bytes and falls back to CSV.
Matrix read_matrix(const std::filesystem::path &path, FileFormat format = FileFormat::automatic);
void write_matrix(const Matrix &m, const std::filesystem::path &path, FileFormat format = FileFormat::binary);

Labels read_labels(const std::filesystem::path &path, FileFormat format = FileFormat::automatic);
void write_labels(const Labels &labels, const std::filesystem::path &path,
                  FileFormat format = FileFormat::binary);

/// In-memory codecs behind the file functions.
std::string encode_matrix_binary(const Matrix &m);
Matrix decode_matrix_binary(const std::string &bytes);
std::string encode_matrix_csv(const Matrix &m);
Matrix decode_matrix_csv(const std::string &text);
std::string encode_labels_binary(const Labels &labels);
Labels decode_labels_binary(const std::string &bytes);

/// Picks the CSV format for *.csv paths and binary otherwise.
FileFormat format_for_path(const std::filesystem::path &path);

std::string read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, const std::string &bytes);

/// 64-bit FNV-1a digest.
std::uint64_t fnv1a64(const std::string &bytes);

/// Returns the labels as an N-vector of class counts for classes [0, n_classes).
std::vector<std::uint64_t> class_counts(const Labels &labels, Index n_classes);

Index infer_n_classes(const Labels &labels);

} // namespace atypicalib
