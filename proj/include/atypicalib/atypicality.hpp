#pragma once

#include "atypicalib/core.hpp"

#include <Eigen/Cholesky>

#include <optional>
#include <vector>

namespace atypicalib {

// ---------------------------------------------------------------------------
// Gaussian class-conditionals with a shared covariance
// ---------------------------------------------------------------------------

enum class PriorMode { empirical, uniform };

struct GmmModel {
  Matrix class_means;      // C x d, row c holds mu_c
  Matrix chol_factor;      // d x d lower triangular, L L^T = Sigma + ridge I
  double log_det = 0.0;    // log det(Sigma + ridge I)
  double ridge = 0.0;
  VectorXd class_log_priors;

  Index dim() const { return class_means.cols(); }
  Index n_classes() const { return class_means.rows(); }
};

struct GmmOptions {
  /// Explicit ridge. Unset means 1e-6 * trace(Sigma) / d, floored at 1e-12.
  std::optional<double> ridge;
  PriorMode priors = PriorMode::empirical;
};

/// Per-class means and the pooled maximum-likelihood covariance
/// (denominator N), factored as Sigma + ridge I = L L^T.
GmmModel fit_gmm(const Matrix &embeddings, const Labels &labels, Index n_classes, const GmmOptions &options = {});

/// Pooled within-class covariance with denominator N.
Matrix pooled_covariance(const Matrix &embeddings, const Labels &labels, const Matrix &class_means);

/// log N(x; mu_c, Sigma + ridge I) via a triangular solve against L.
double gmm_class_log_density(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x, Index c);

/// All C class log-densities for one query.
VectorXd gmm_class_log_densities(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x);

/// -max_c log P(x | c).
double input_atypicality_gmm(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x);

/// -log sum_c pi_c P(x | c).
double input_atypicality_marginal(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x);

enum class GmmScore { class_conditional, marginal };

/// Row-wise scoring; each query is independent so output is identical for
/// any thread count.
VectorXd score_gmm(const GmmModel &model, const Matrix &queries, GmmScore score = GmmScore::class_conditional,
                   unsigned threads = 1);

// ---------------------------------------------------------------------------
// k-nearest-neighbour distance
// ---------------------------------------------------------------------------

enum class KnnMode { nearest, mean_of_k };

struct KnnModel {
  Matrix reference; // N_train x d
  Index k = 5;
  KnnMode mode = KnnMode::mean_of_k;
};

KnnModel make_knn(Matrix reference, Index k = 5, KnnMode mode = KnnMode::mean_of_k);

/// Exact brute-force Euclidean distances. `nearest` returns the minimum,
/// `mean_of_k` the mean of the k smallest.
VectorXd knn_atypicality(const KnnModel &model, const Matrix &queries, unsigned threads = 1);

// ---------------------------------------------------------------------------
// Class atypicality
// ---------------------------------------------------------------------------

struct ClassPrior {
  std::vector<std::uint64_t> counts;
  VectorXd a_y; // -log(count / N); +inf for unseen classes
  bool has_unseen_class = false;
};

ClassPrior class_atypicality(const Labels &labels, Index n_classes);

} // namespace atypicalib
