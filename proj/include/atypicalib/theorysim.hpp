#pragma once

#include "atypicalib/core.hpp"

#include <cstdint>
#include <vector>

namespace atypicalib {

// Well-specified logistic model: X ~ N(0, I_d), P(Y = 1 | X) = sigmoid(<beta*, X>),
// with the MLE fitted on n samples and its signed calibration error read off
// across quantiles of a(X) = |X|^2 / 2.

struct SimConfig {
  Index d = 50;
  Index n = 500;
  Index n_test = 20000;
  VectorXd beta_star;
  std::uint64_t seed = 0;
  Index K = 5;
  Index trials = 50;

  void validate() const;
};

/// beta* proportional to (1, ..., 1) with the given Euclidean norm.
VectorXd default_beta_star(Index d, double norm = 1.0);

/// Config with the defaults above and beta* from default_beta_star.
SimConfig default_sim_config();

struct LogisticSample {
  Matrix X;
  std::vector<int> y; // +1 / -1
};

/// n draws from the model using stream `stream` of the seeded generator.
LogisticSample generate_logistic(const VectorXd &beta_star, Index n, std::uint64_t seed, std::uint64_t stream = 0);

/// Training sample of the config (stream 0).
LogisticSample generate_logistic(const SimConfig &config);

double sigmoid(double t);

/// Mean logistic loss (1/n) sum log(1 + exp(b'x)) - y01 * b'x with y01 = (y + 1) / 2.
double logistic_loss(const Matrix &X, const std::vector<int> &y, const VectorXd &beta);
VectorXd logistic_gradient(const Matrix &X, const std::vector<int> &y, const VectorXd &beta);

struct LogisticFitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  /// Norm beyond which the data are treated as separable.
  double max_norm = 1e3;
};

/// Newton's method with step halving. Throws SeparationError if the estimate
/// diverges or the gradient tolerance is not reached.
VectorXd fit_logistic_mle(const Matrix &X, const std::vector<int> &y, const LogisticFitOptions &options = {});

enum class GapEstimator {
  /// u - 1{predicted sign == y}
  indicator,
  /// u - P(Y = predicted sign | x) under beta*; same expectation, lower variance
  conditional,
};

struct QuantileGaps {
  std::vector<double> edges; // K + 1, over a(x) on the test sample
  std::vector<double> gaps;  // mean signed gap per quantile
  std::vector<Index> counts;
};

/// Confidence u = sigmoid(|beta_hat' x|), predicted sign of beta_hat' x.
QuantileGaps signed_gap_by_quantile(const VectorXd &beta_star, const VectorXd &beta_hat, const Matrix &X_test,
                                    const std::vector<int> &y_test, Index K,
                                    GapEstimator estimator = GapEstimator::indicator);

struct TrialResult {
  Index trial = 0;
  VectorXd beta_hat;
  std::vector<double> gaps;
  std::vector<Index> counts;
};

struct Theorem1Report {
  std::vector<double> mean_gaps;
  std::vector<double> std_errors;
  double spearman = 0.0;
  Index trials_used = 0;
  Index trials_skipped = 0;
  std::vector<TrialResult> per_trial; // successful trials, by trial index
};

/// Averages the per-quantile gaps over independent trials. Trial t draws its
/// training and test samples from streams 2t+1 and 2t+2 of the seed, so the
/// report is identical for any thread count.
Theorem1Report run_theorem1(const SimConfig &config, unsigned threads = 1,
                            GapEstimator estimator = GapEstimator::indicator);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double> &a, const std::vector<double> &b);

} // namespace atypicalib
