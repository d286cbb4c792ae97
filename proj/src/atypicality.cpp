#include "atypicalib/atypicality.hpp"

#include "atypicalib/datakit.hpp"
#include "atypicalib/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace atypicalib {

Matrix pooled_covariance(const Matrix &embeddings, const Labels &labels, const Matrix &class_means) {
  const Index n = embeddings.rows();
  Matrix centered(n, embeddings.cols());
  for (Index i = 0; i < n; ++i) {
    centered.row(i) = embeddings.row(i) - class_means.row(labels[static_cast<std::size_t>(i)]);
  }
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);
  // Exact symmetry keeps the Cholesky input independent of summation order.
  cov = (0.5 * (cov + cov.transpose())).eval();
  return cov;
}

GmmModel fit_gmm(const Matrix &embeddings, const Labels &labels, Index n_classes, const GmmOptions &options) {
  const Index n = embeddings.rows();
  const Index d = embeddings.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("fit_gmm: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " embeddings");
  }
  if (n_classes < 1 || d < 1) {
    throw ArgumentError("fit_gmm: need at least one class and one dimension");
  }
  if (!embeddings.allFinite()) {
    throw DataError("fit_gmm: embeddings contain non-finite values");
  }
  const auto counts = class_counts(labels, n_classes);
  for (Index c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw FitError("fit_gmm: class " + std::to_string(c) + " has no training samples");
    }
  }
  if (n <= d) {
    warn("fit_gmm: " + std::to_string(n) + " samples for dimension " + std::to_string(d) +
         "; covariance is rank deficient and relies on the ridge");
  }

  GmmModel model;
  model.class_means = Matrix::Zero(n_classes, d);
  for (Index i = 0; i < n; ++i) {
    model.class_means.row(labels[static_cast<std::size_t>(i)]) += embeddings.row(i);
  }
  for (Index c = 0; c < n_classes; ++c) {
    model.class_means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  Matrix cov = pooled_covariance(embeddings, labels, model.class_means);
  model.ridge = options.ridge ? *options.ridge : std::max(1e-6 * cov.trace() / static_cast<double>(d), 1e-12);
  if (!(model.ridge >= 0.0)) {
    throw ArgumentError("fit_gmm: ridge must be non-negative");
  }
  cov.diagonal().array() += model.ridge;

  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("fit_gmm: Cholesky of Sigma + ridge I failed with ridge " + std::to_string(model.ridge) +
                         "; use a larger ridge");
  }
  model.chol_factor = llt.matrixL();
  if ((model.chol_factor.diagonal().array() <= 0.0).any() || !model.chol_factor.allFinite()) {
    throw NumericalError("fit_gmm: Cholesky factor has a non-positive pivot; use a larger ridge");
  }
  model.log_det = 2.0 * model.chol_factor.diagonal().array().log().sum();

  model.class_log_priors.resize(n_classes);
  for (Index c = 0; c < n_classes; ++c) {
    model.class_log_priors(c) = options.priors == PriorMode::uniform
                                    ? -std::log(static_cast<double>(n_classes))
                                    : std::log(static_cast<double>(counts[static_cast<std::size_t>(c)]) /
                                               static_cast<double>(n));
  }
  return model;
}

double gmm_class_log_density(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x, Index c) {
  if (x.size() != model.dim()) {
    throw ShapeError("gmm: query has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.dim()));
  }
  if (c < 0 || c >= model.n_classes()) {
    throw ArgumentError("gmm: class index " + std::to_string(c) + " out of range");
  }
  const VectorXd centered = (x - model.class_means.row(c)).transpose();
  const VectorXd z = model.chol_factor.triangularView<Eigen::Lower>().solve(centered);
  const double d = static_cast<double>(model.dim());
  return -0.5 * z.squaredNorm() - 0.5 * model.log_det - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

VectorXd gmm_class_log_densities(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x) {
  VectorXd out(model.n_classes());
  for (Index c = 0; c < model.n_classes(); ++c) {
    out(c) = gmm_class_log_density(model, x, c);
  }
  return out;
}

double input_atypicality_gmm(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x) {
  return -gmm_class_log_densities(model, x).maxCoeff();
}

double input_atypicality_marginal(const GmmModel &model, const Eigen::Ref<const RowVector<double>> &x) {
  const VectorXd joint = gmm_class_log_densities(model, x) + model.class_log_priors;
  return -logsumexp(joint);
}

VectorXd score_gmm(const GmmModel &model, const Matrix &queries, GmmScore score, unsigned threads) {
  if (queries.cols() != model.dim()) {
    throw ShapeError("score_gmm: queries have dimension " + std::to_string(queries.cols()) + ", model expects " +
                     std::to_string(model.dim()));
  }
  VectorXd out(queries.rows());
  parallel_for(static_cast<std::size_t>(queries.rows()), threads, [&](std::size_t i) {
    const auto row = queries.row(static_cast<Index>(i));
    out(static_cast<Index>(i)) = score == GmmScore::marginal ? input_atypicality_marginal(model, row)
                                                              : input_atypicality_gmm(model, row);
  });
  return out;
}

// ---------------------------------------------------------------------------

KnnModel make_knn(Matrix reference, Index k, KnnMode mode) {
  if (k < 1) {
    throw ArgumentError("knn: k must be at least 1");
  }
  if (k > reference.rows()) {
    throw ArgumentError("knn: k = " + std::to_string(k) + " exceeds the " + std::to_string(reference.rows()) +
                        " reference points");
  }
  if (!reference.allFinite()) {
    throw DataError("knn: reference contains non-finite values");
  }
  return KnnModel{std::move(reference), k, mode};
}

VectorXd knn_atypicality(const KnnModel &model, const Matrix &queries, unsigned threads) {
  const Index n_ref = model.reference.rows();
  if (model.k < 1 || model.k > n_ref) {
    throw ArgumentError("knn: k = " + std::to_string(model.k) + " invalid for " + std::to_string(n_ref) +
                        " reference points");
  }
  if (queries.cols() != model.reference.cols()) {
    throw ShapeError("knn: queries have dimension " + std::to_string(queries.cols()) + ", reference has " +
                     std::to_string(model.reference.cols()));
  }
  const Index k = model.mode == KnnMode::nearest ? 1 : model.k;
  VectorXd out(queries.rows());
  parallel_for(static_cast<std::size_t>(queries.rows()), threads, [&](std::size_t qi) {
    const auto q = queries.row(static_cast<Index>(qi));
    std::vector<double> dist(static_cast<std::size_t>(n_ref));
    for (Index r = 0; r < n_ref; ++r) {
      dist[static_cast<std::size_t>(r)] = (model.reference.row(r) - q).squaredNorm();
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double total = 0.0;
    for (Index j = 0; j < k; ++j) {
      total += std::sqrt(dist[static_cast<std::size_t>(j)]);
    }
    out(static_cast<Index>(qi)) = total / static_cast<double>(k);
  });
  return out;
}

// ---------------------------------------------------------------------------

ClassPrior class_atypicality(const Labels &labels, Index n_classes) {
  if (labels.empty()) {
    throw ArgumentError("class_atypicality: no labels");
  }
  ClassPrior prior;
  prior.counts = class_counts(labels, n_classes);
  prior.a_y.resize(n_classes);
  const double total = static_cast<double>(labels.size());
  for (Index c = 0; c < n_classes; ++c) {
    const auto count = prior.counts[static_cast<std::size_t>(c)];
    if (count == 0) {
      prior.a_y(c) = std::numeric_limits<double>::infinity();
      prior.has_unseen_class = true;
    } else {
      prior.a_y(c) = -std::log(static_cast<double>(count) / total);
    }
  }
  return prior;
}

} // namespace atypicalib
