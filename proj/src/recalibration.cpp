#include "atypicalib/recalibration.hpp"

#include "atypicalib/datakit.hpp"
#include "atypicalib/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace atypicalib {

namespace {

void check_logits_labels(const Matrix &logits, const Labels &labels, const char *where) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw ShapeError(std::string(where) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " logit rows");
  }
  if (!logits.allFinite()) {
    throw DataError(std::string(where) + ": logits must be finite");
  }
  for (const auto y : labels) {
    if (static_cast<Index>(y) >= logits.cols()) {
      throw DataError(std::string(where) + ": label " + std::to_string(y) + " outside [0, " +
                      std::to_string(logits.cols()) + ")");
    }
  }
}

void check_length(Index expected, Index got, const char *what, const char *where) {
  if (expected != got) {
    throw ShapeError(std::string(where) + ": " + what + " has " + std::to_string(got) + " entries, expected " +
                     std::to_string(expected));
  }
}

Matrix rows_of(const Matrix &m, const std::vector<Index> &rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Index>(k)) = m.row(rows[k]);
  }
  return out;
}

Labels labels_of(const Labels &labels, const std::vector<Index> &rows) {
  Labels out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out[k] = labels[static_cast<std::size_t>(rows[k])];
  }
  return out;
}

/// d/d(beta) of the mean cross-entropy of softmax(beta * logits).
double ts_slope_in_beta(const Matrix &logits, const Labels &labels, double beta) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto shifted = (logits.row(i).array() - logits.row(i).maxCoeff()).eval();
    const auto e = (beta * shifted).exp().eval();
    const double expected = (e * shifted).sum() / e.sum();
    total += expected - shifted(labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

} // namespace

// ---------------------------------------------------------------------------

double ts_nll(const Matrix &logits, const Labels &labels, double tau) {
  check_logits_labels(logits, labels, "ts_nll");
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto z = (logits.row(i) / tau).eval();
    total += logsumexp(z) - z(labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

TemperatureModel fit_ts(const Matrix &logits, const Labels &labels) {
  check_logits_labels(logits, labels, "fit_ts");
  if (logits.rows() < 2) {
    throw FitError("fit_ts: need at least two samples");
  }
  // Sign of d NLL / d log(tau) = -beta * d NLL / d beta, increasing in log tau.
  auto rising = [&](double log_tau) { return ts_slope_in_beta(logits, labels, std::exp(-log_tau)) < 0.0; };
  double lo = std::log(kMinTemperature);
  double hi = std::log(kMaxTemperature);
  if (rising(lo)) {
    return {kMinTemperature};
  }
  if (!rising(hi)) {
    return {kMaxTemperature};
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) {
      break;
    }
    (rising(mid) ? hi : lo) = mid;
  }
  return {std::exp(0.5 * (lo + hi))};
}

Matrix apply_ts(const TemperatureModel &model, const Matrix &logits) {
  if (!(model.tau > 0.0)) {
    throw ArgumentError("apply_ts: temperature must be positive");
  }
  return softmax_rows(logits / model.tau);
}

PerQuantileTsModel fit_ts_per_quantile(const Matrix &logits, const Labels &labels,
                                       const Eigen::Ref<const VectorXd> &atypicality, Index K) {
  if (K < 1) {
    throw ArgumentError("fit_ts_per_quantile: K must be at least 1");
  }
  check_logits_labels(logits, labels, "fit_ts_per_quantile");
  check_length(logits.rows(), atypicality.size(), "atypicality", "fit_ts_per_quantile");
  PerQuantileTsModel model;
  model.global_tau = fit_ts(logits, labels).tau;
  model.atyp_edges = quantile_edges(atypicality, K);
  const auto groups = assign_groups(atypicality, model.atyp_edges);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    members[static_cast<std::size_t>(groups[i])].push_back(static_cast<Index>(i));
  }
  for (Index k = 0; k < K; ++k) {
    const auto &rows = members[static_cast<std::size_t>(k)];
    if (static_cast<Index>(rows.size()) < kMinGroupSize) {
      warn("fit_ts_per_quantile: group " + std::to_string(k) + " has " + std::to_string(rows.size()) +
           " samples; using the global temperature");
      model.taus.push_back(model.global_tau);
    } else if (static_cast<Index>(rows.size()) == logits.rows()) {
      model.taus.push_back(model.global_tau);
    } else {
      model.taus.push_back(fit_ts(rows_of(logits, rows), labels_of(labels, rows)).tau);
    }
  }
  return model;
}

Matrix apply_ts_per_quantile(const PerQuantileTsModel &model, const Matrix &logits,
                             const Eigen::Ref<const VectorXd> &atypicality) {
  check_length(logits.rows(), atypicality.size(), "atypicality", "apply_ts_per_quantile");
  const auto groups = assign_groups(atypicality, model.atyp_edges);
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double tau = model.taus[static_cast<std::size_t>(groups[static_cast<std::size_t>(i)])];
    out.row(i) = softmax_rows(logits.row(i) / tau);
  }
  return out;
}

// ---------------------------------------------------------------------------

AarObjective::AarObjective(const Matrix &logits, const Labels &labels, VectorXd normalized_atypicality)
    : log_probs_(log_softmax_rows(logits)), labels_(labels), atyp_(std::move(normalized_atypicality)) {
  check_logits_labels(logits, labels, "AarObjective");
  check_length(logits.rows(), atyp_.size(), "atypicality", "AarObjective");
}

double AarObjective::operator()(const VectorXd &theta, VectorXd &grad) const {
  const Index n = log_probs_.rows();
  const Index C = log_probs_.cols();
  const double c0 = theta(0), c1 = theta(1), c2 = theta(2);
  const auto s = theta.tail(C);
  grad.setZero(n_params());
  double loss = 0.0;
  VectorXd z(C);
  for (Index i = 0; i < n; ++i) {
    const double t = atyp_(i);
    const double phi = (c2 * t + c1) * t + c0;
    z = phi * log_probs_.row(i).transpose() + s;
    const double lse = logsumexp(z);
    const auto y = static_cast<Index>(labels_[static_cast<std::size_t>(i)]);
    loss += lse - z(y);
    VectorXd r = (z.array() - lse).exp().matrix();
    r(y) -= 1.0;
    grad.tail(C) += r;
    const double dphi = r.dot(log_probs_.row(i).transpose());
    grad(0) += dphi;
    grad(1) += dphi * t;
    grad(2) += dphi * t * t;
  }
  grad /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

double AarObjective::value(const VectorXd &theta) const {
  VectorXd grad;
  return (*this)(theta, grad);
}

AarFit fit_aar(const Matrix &logits, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
               const AarOptions &options) {
  check_logits_labels(logits, labels, "fit_aar");
  check_length(logits.rows(), atypicality.size(), "atypicality", "fit_aar");
  if (logits.rows() < 1) {
    throw FitError("fit_aar: empty calibration set");
  }
  if (!atypicality.allFinite()) {
    throw DataError("fit_aar: atypicality must be finite (clamp or filter infinite values first)");
  }
  AarFit fit;
  const double n = static_cast<double>(atypicality.size());
  fit.model.a_mean = atypicality.sum() / n;
  const double var = (atypicality.array() - fit.model.a_mean).square().sum() / n;
  fit.model.a_std = var > 0.0 ? std::sqrt(var) : 1.0;

  VectorXd normalized(atypicality.size());
  for (Index i = 0; i < atypicality.size(); ++i) {
    normalized(i) = fit.model.normalize(atypicality(i));
  }
  const AarObjective objective(logits, labels, std::move(normalized));

  VectorXd theta0 = VectorXd::Ones(objective.n_params());
  theta0.head(3).setZero();
  fit.summary = optim::minimize_lbfgs<double>(objective, theta0, options.lbfgs);
  if (!fit.summary.converged) {
    char norm[32];
    std::snprintf(norm, sizeof norm, "%.3e", fit.summary.gradient_norm);
    warn("fit_aar: optimizer stopped before convergence (" + fit.summary.message + "), gradient norm " + norm);
  }
  const VectorXd &theta = fit.summary.x;
  fit.model.c0 = theta(0);
  fit.model.c1 = theta(1);
  fit.model.c2 = theta(2);
  fit.model.s = theta.tail(logits.cols());
  fit.model.s.array() -= fit.model.s.mean();
  return fit;
}

Matrix apply_aar(const AarModel &model, const Matrix &logits, const Eigen::Ref<const VectorXd> &atypicality) {
  check_length(logits.rows(), atypicality.size(), "atypicality", "apply_aar");
  if (logits.cols() != model.n_classes()) {
    throw ShapeError("apply_aar: logits have " + std::to_string(logits.cols()) + " classes, model has " +
                     std::to_string(model.n_classes()));
  }
  const Matrix log_probs = log_softmax_rows(logits);
  Matrix z(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    z.row(i) = model.phi(atypicality(i)) * log_probs.row(i) + model.s.transpose();
  }
  return softmax_rows(z);
}

// ---------------------------------------------------------------------------

CfModel fit_cf(const Matrix &content_free_probs) {
  if (content_free_probs.rows() < 1) {
    throw FitError("fit_cf: no content-free predictions");
  }
  const VectorXd p_cf = content_free_probs.colwise().mean().transpose();
  if (!p_cf.allFinite() || (p_cf.array() <= 0.0).any()) {
    throw DataError("fit_cf: every class needs positive content-free probability");
  }
  return {p_cf.cwiseInverse()};
}

Matrix apply_cf(const CfModel &model, const Matrix &probs) {
  if (probs.cols() != model.w.size()) {
    throw ShapeError("apply_cf: probabilities have " + std::to_string(probs.cols()) + " classes, model has " +
                     std::to_string(model.w.size()));
  }
  return softmax_rows(probs * model.w.asDiagonal());
}

// ---------------------------------------------------------------------------

double GroupTsModel::tau_for(std::uint32_t group) const {
  const auto it = std::lower_bound(group_ids.begin(), group_ids.end(), group);
  if (it == group_ids.end() || *it != group) {
    return fallback_tau;
  }
  return taus[static_cast<std::size_t>(it - group_ids.begin())];
}

GroupTsModel fit_group_ts(const Matrix &logits, const Labels &labels, const std::vector<std::uint32_t> &groups) {
  check_logits_labels(logits, labels, "fit_group_ts");
  check_length(logits.rows(), static_cast<Index>(groups.size()), "group labels", "fit_group_ts");
  GroupTsModel model;
  model.fallback_tau = fit_ts(logits, labels).tau;
  std::map<std::uint32_t, std::vector<Index>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    members[groups[i]].push_back(static_cast<Index>(i));
  }
  for (const auto &[id, rows] : members) {
    model.group_ids.push_back(id);
    if (static_cast<Index>(rows.size()) < kMinGroupSize) {
      warn("fit_group_ts: group " + std::to_string(id) + " has " + std::to_string(rows.size()) +
           " samples; using the global temperature");
      model.taus.push_back(model.fallback_tau);
    } else if (members.size() == 1) {
      model.taus.push_back(model.fallback_tau);
    } else {
      model.taus.push_back(fit_ts(rows_of(logits, rows), labels_of(labels, rows)).tau);
    }
  }
  return model;
}

Matrix apply_group_ts(const GroupTsModel &model, const Matrix &logits, const std::vector<std::uint32_t> &groups) {
  check_length(logits.rows(), static_cast<Index>(groups.size()), "group labels", "apply_group_ts");
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = softmax_rows(logits.row(i) / model.tau_for(groups[static_cast<std::size_t>(i)]));
  }
  return out;
}

} // namespace atypicalib
