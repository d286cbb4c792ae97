#include "atypicalib/theorysim.hpp"

#include "atypicalib/metrics.hpp"
#include "atypicalib/parallel.hpp"
#include "atypicalib/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace atypicalib {

namespace {

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

std::vector<double> average_ranks(const std::vector<double> &v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
      ++j;
    }
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = rank;
    }
    i = j + 1;
  }
  return ranks;
}

} // namespace

void SimConfig::validate() const {
  if (d < 1) {
    throw ArgumentError("theory-sim: d must be at least 1");
  }
  if (n <= d) {
    throw ArgumentError("theory-sim: n = " + std::to_string(n) + " does not exceed d = " + std::to_string(d) +
                        "; the logistic MLE is unlikely to exist (separation)");
  }
  if (n_test < K || K < 1) {
    throw ArgumentError("theory-sim: need K >= 1 and n_test >= K");
  }
  if (trials < 1) {
    throw ArgumentError("theory-sim: trials must be at least 1");
  }
  if (beta_star.size() != d || !beta_star.allFinite()) {
    throw ArgumentError("theory-sim: beta* must be a finite vector of dimension d");
  }
}

VectorXd default_beta_star(Index d, double norm) {
  return VectorXd::Constant(d, norm / std::sqrt(static_cast<double>(d)));
}

SimConfig default_sim_config() {
  SimConfig config;
  config.beta_star = default_beta_star(config.d);
  return config;
}

double sigmoid(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

LogisticSample generate_logistic(const VectorXd &beta_star, Index n, std::uint64_t seed, std::uint64_t stream) {
  const Index d = beta_star.size();
  Xoshiro256 rng(seed, stream);
  LogisticSample sample;
  sample.X.resize(n, d);
  sample.y.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) {
      sample.X(i, j) = rng.normal();
    }
    const double p = sigmoid(sample.X.row(i).dot(beta_star));
    sample.y[static_cast<std::size_t>(i)] = rng.uniform() < p ? 1 : -1;
  }
  return sample;
}

LogisticSample generate_logistic(const SimConfig &config) {
  return generate_logistic(config.beta_star, config.n, config.seed, 0);
}

double logistic_loss(const Matrix &X, const std::vector<int> &y, const VectorXd &beta) {
  const VectorXd t = X * beta;
  double total = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    const double y01 = y[static_cast<std::size_t>(i)] > 0 ? 1.0 : 0.0;
    total += softplus(t(i)) - y01 * t(i);
  }
  return total / static_cast<double>(X.rows());
}

VectorXd logistic_gradient(const Matrix &X, const std::vector<int> &y, const VectorXd &beta) {
  const VectorXd t = X * beta;
  VectorXd r(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    r(i) = sigmoid(t(i)) - (y[static_cast<std::size_t>(i)] > 0 ? 1.0 : 0.0);
  }
  return X.transpose() * r / static_cast<double>(X.rows());
}

VectorXd fit_logistic_mle(const Matrix &X, const std::vector<int> &y, const LogisticFitOptions &options) {
  if (static_cast<Index>(y.size()) != X.rows()) {
    throw ShapeError("fit_logistic_mle: label count does not match the number of rows");
  }
  if (X.rows() < 1) {
    throw FitError("fit_logistic_mle: empty sample");
  }
  const Index d = X.cols();
  const double n = static_cast<double>(X.rows());
  VectorXd beta = VectorXd::Zero(d);
  double loss = logistic_loss(X, y, beta);
  for (int it = 0; it < options.max_iterations; ++it) {
    const VectorXd t = X * beta;
    VectorXd r(X.rows()), w(X.rows());
    for (Index i = 0; i < X.rows(); ++i) {
      const double p = sigmoid(t(i));
      r(i) = p - (y[static_cast<std::size_t>(i)] > 0 ? 1.0 : 0.0);
      w(i) = p * (1.0 - p);
    }
    const VectorXd grad = X.transpose() * r / n;
    if (grad.norm() <= options.gradient_tolerance) {
      bool separated = true;
      for (Index i = 0; i < X.rows() && separated; ++i) {
        separated = (y[static_cast<std::size_t>(i)] > 0 ? t(i) : -t(i)) > 0.0;
      }
      if (separated) {
        throw SeparationError("fit_logistic_mle: the sample is linearly separable, no MLE exists");
      }
      return beta;
    }
    const Matrix hessian = (X.transpose() * w.asDiagonal() * X) / n;
    VectorXd step;
    Eigen::LLT<Matrix> llt(hessian);
    if (llt.info() == Eigen::Success) {
      step = llt.solve(grad);
    } else {
      step = hessian.ldlt().solve(grad);
    }
    if (!step.allFinite()) {
      throw SeparationError("fit_logistic_mle: singular Hessian, data look separable");
    }
    double scale = 1.0;
    VectorXd candidate = beta - step;
    double candidate_loss = logistic_loss(X, y, candidate);
    for (int halving = 0; halving < 50 && !(candidate_loss <= loss); ++halving) {
      scale *= 0.5;
      candidate = beta - scale * step;
      candidate_loss = logistic_loss(X, y, candidate);
    }
    if (!(candidate_loss <= loss)) {
      // At the loss floor; the gradient test decides.
      break;
    }
    beta = std::move(candidate);
    loss = candidate_loss;
    if (beta.norm() > options.max_norm) {
      throw SeparationError("fit_logistic_mle: |beta| exceeded " + std::to_string(options.max_norm) +
                            ", data look separable");
    }
  }
  if (logistic_gradient(X, y, beta).norm() > options.gradient_tolerance) {
    throw SeparationError("fit_logistic_mle: Newton iterations did not converge");
  }
  return beta;
}

QuantileGaps signed_gap_by_quantile(const VectorXd &beta_star, const VectorXd &beta_hat, const Matrix &X_test,
                                    const std::vector<int> &y_test, Index K, GapEstimator estimator) {
  if (K < 1) {
    throw ArgumentError("signed_gap_by_quantile: K must be at least 1");
  }
  if (static_cast<Index>(y_test.size()) != X_test.rows() || beta_hat.size() != X_test.cols()) {
    throw ShapeError("signed_gap_by_quantile: inconsistent test sample dimensions");
  }
  if (estimator == GapEstimator::conditional && beta_star.size() != X_test.cols()) {
    throw ShapeError("signed_gap_by_quantile: beta* dimension does not match the test sample");
  }
  const Index n = X_test.rows();
  VectorXd atyp(n), gap(n);
  for (Index i = 0; i < n; ++i) {
    const auto x = X_test.row(i);
    atyp(i) = 0.5 * x.squaredNorm();
    const double t = x.dot(beta_hat);
    const double u = sigmoid(std::abs(t));
    const int predicted = t > 0.0 ? 1 : -1;
    double correct = 0.0;
    if (estimator == GapEstimator::conditional) {
      correct = sigmoid(predicted * x.dot(beta_star));
    } else {
      correct = predicted == y_test[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    gap(i) = u - correct;
  }
  QuantileGaps out;
  out.edges = quantile_edges(atyp, K);
  const auto groups = assign_groups(atyp, out.edges);
  out.gaps.assign(static_cast<std::size_t>(K), 0.0);
  out.counts.assign(static_cast<std::size_t>(K), 0);
  for (Index i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(groups[static_cast<std::size_t>(i)]);
    out.gaps[g] += gap(i);
    ++out.counts[g];
  }
  for (std::size_t g = 0; g < out.gaps.size(); ++g) {
    out.gaps[g] = out.counts[g] > 0 ? out.gaps[g] / static_cast<double>(out.counts[g])
                                    : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

double spearman(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ArgumentError("spearman: need two equally sized samples of length >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return sab / std::sqrt(saa * sbb);
}

Theorem1Report run_theorem1(const SimConfig &config, unsigned threads, GapEstimator estimator) {
  config.validate();
  const auto trials = static_cast<std::size_t>(config.trials);
  std::vector<std::optional<TrialResult>> results(trials);
  parallel_for(trials, threads, [&](std::size_t t) {
    const auto train = generate_logistic(config.beta_star, config.n, config.seed, 2 * t + 1);
    const auto test = generate_logistic(config.beta_star, config.n_test, config.seed, 2 * t + 2);
    try {
      TrialResult r;
      r.trial = static_cast<Index>(t);
      r.beta_hat = fit_logistic_mle(train.X, train.y);
      auto gaps = signed_gap_by_quantile(config.beta_star, r.beta_hat, test.X, test.y, config.K, estimator);
      r.gaps = std::move(gaps.gaps);
      r.counts = std::move(gaps.counts);
      results[t] = std::move(r);
    } catch (const SeparationError &) {
      results[t].reset();
    }
  });

  Theorem1Report report;
  const auto K = static_cast<std::size_t>(config.K);
  report.mean_gaps.assign(K, 0.0);
  report.std_errors.assign(K, std::numeric_limits<double>::quiet_NaN());
  for (auto &r : results) {
    if (!r) {
      ++report.trials_skipped;
      continue;
    }
    report.per_trial.push_back(std::move(*r));
  }
  report.trials_used = static_cast<Index>(report.per_trial.size());
  if (report.trials_used == 0) {
    throw SeparationError("theory-sim: every trial failed to produce a logistic MLE");
  }
  const double T = static_cast<double>(report.trials_used);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (const auto &r : report.per_trial) {
      sum += r.gaps[k];
    }
    report.mean_gaps[k] = sum / T;
    if (report.trials_used > 1) {
      double ss = 0.0;
      for (const auto &r : report.per_trial) {
        ss += (r.gaps[k] - report.mean_gaps[k]) * (r.gaps[k] - report.mean_gaps[k]);
      }
      report.std_errors[k] = std::sqrt(ss / (T - 1.0) / T);
    }
  }
  if (K >= 2) {
    std::vector<double> index(K);
    std::iota(index.begin(), index.end(), 0.0);
    report.spearman = spearman(index, report.mean_gaps);
  } else {
    report.spearman = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

} // namespace atypicalib
