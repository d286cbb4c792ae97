#include "atypicalib/conformal.hpp"

#include "atypicalib/datakit.hpp"
#include "atypicalib/metrics.hpp"
#include "atypicalib/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace atypicalib {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ArgumentError("conformal: alpha must lie in (0, 1)");
  }
}

std::vector<double> scores_for(const Matrix &probs, const Labels &labels, const std::vector<Index> &rows,
                               bool regularized, Index k_reg, double lambda_reg) {
  std::vector<double> scores;
  scores.reserve(rows.size());
  for (const Index i : rows) {
    const auto y = static_cast<Index>(labels[static_cast<std::size_t>(i)]);
    scores.push_back(regularized ? raps_score(probs.row(i), y, k_reg, lambda_reg) : aps_score(probs.row(i), y));
  }
  return scores;
}

std::vector<Index> all_rows(Index n) {
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

/// Number of leading classes (in descending order) accepted by `threshold`.
Index set_size(const Eigen::Ref<const RowVector<double>> &probs, double threshold, bool regularized, Index k_reg,
               double lambda_reg) {
  const auto order = descending_order(probs);
  double cumulative = 0.0;
  Index size = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    cumulative += probs(order[r]);
    const auto rank = static_cast<Index>(r) + 1;
    const double score =
        regularized ? cumulative + lambda_reg * static_cast<double>(std::max<Index>(0, rank - k_reg)) : cumulative;
    if (score <= threshold) {
      size = rank;
    } else {
      break;
    }
  }
  return std::max<Index>(size, 1);
}

} // namespace

std::string method_name(ConformalMethod method) {
  switch (method) {
  case ConformalMethod::aps:
    return "aps";
  case ConformalMethod::raps:
    return "raps";
  case ConformalMethod::aa_aps:
    return "aa_aps";
  case ConformalMethod::aa_raps:
    return "aa_raps";
  }
  return "unknown";
}

ConformalMethod parse_method(const std::string &name) {
  if (name == "aps") return ConformalMethod::aps;
  if (name == "raps") return ConformalMethod::raps;
  if (name == "aa_aps" || name == "aa-aps") return ConformalMethod::aa_aps;
  if (name == "aa_raps" || name == "aa-raps") return ConformalMethod::aa_raps;
  throw ArgumentError("unknown conformal method '" + name + "'");
}

bool is_grouped(ConformalMethod method) {
  return method == ConformalMethod::aa_aps || method == ConformalMethod::aa_raps;
}

double ConformalModel::threshold(double confidence, std::optional<double> atypicality) const {
  if (!is_grouped(method)) {
    return q_hat;
  }
  if (!atypicality) {
    throw ArgumentError("conformal: method " + method_name(method) + " needs an atypicality value");
  }
  const Index ka = static_cast<Index>(atyp_edges.size()) - 1;
  const Index ci = quantile_group(confidence, conf_edges);
  const Index ai = quantile_group(*atypicality, atyp_edges);
  return group_q[static_cast<std::size_t>(ci * ka + ai)];
}

// ---------------------------------------------------------------------------

std::vector<Index> descending_order(const Eigen::Ref<const RowVector<double>> &probs) {
  std::vector<Index> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return probs(a) > probs(b); });
  return order;
}

Index class_rank(const Eigen::Ref<const RowVector<double>> &probs, Index y) {
  const auto order = descending_order(probs);
  return static_cast<Index>(std::find(order.begin(), order.end(), y) - order.begin()) + 1;
}

double aps_score(const Eigen::Ref<const RowVector<double>> &probs, Index y) {
  if (y < 0 || y >= probs.size()) {
    throw ArgumentError("aps_score: class index out of range");
  }
  double cumulative = 0.0;
  for (const Index c : descending_order(probs)) {
    cumulative += probs(c);
    if (c == y) {
      break;
    }
  }
  return cumulative;
}

double raps_score(const Eigen::Ref<const RowVector<double>> &probs, Index y, Index k_reg, double lambda_reg) {
  const double penalty = static_cast<double>(std::max<Index>(0, class_rank(probs, y) - k_reg));
  return aps_score(probs, y) + lambda_reg * penalty;
}

Index conformal_rank(Index n, double alpha) {
  const double target = static_cast<double>(n + 1) * (1.0 - alpha);
  // (N+1)(1-alpha) is often an integer that 1 - alpha cannot represent exactly.
  return static_cast<Index>(std::ceil(target - 1e-9 * std::max(1.0, target)));
}

double conformal_quantile(std::vector<double> scores, double alpha) {
  check_alpha(alpha);
  const auto n = static_cast<Index>(scores.size());
  const Index rank = conformal_rank(n, alpha);
  if (rank > n) {
    return kInf;
  }
  const auto k = static_cast<std::size_t>(std::max<Index>(rank, 1) - 1);
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), scores.end());
  return scores[k];
}

ConformalModel fit_aps(const Matrix &probs, const Labels &labels, double alpha) {
  check_alpha(alpha);
  check_probs_labels(probs, labels, "fit_aps");
  if (static_cast<double>(probs.rows()) < 1.0 / alpha - 1.0) {
    warn("fit_aps: " + std::to_string(probs.rows()) + " calibration points are too few for alpha " +
         std::to_string(alpha) + "; the threshold saturates");
  }
  ConformalModel model;
  model.method = ConformalMethod::aps;
  model.alpha = alpha;
  model.q_hat = conformal_quantile(scores_for(probs, labels, all_rows(probs.rows()), false, 0, 0.0), alpha);
  return model;
}

ConformalModel fit_raps(const Matrix &probs, const Labels &labels, double alpha, const RapsOptions &options) {
  check_alpha(alpha);
  check_probs_labels(probs, labels, "fit_raps");
  if (options.lambda_grid.empty()) {
    throw ArgumentError("fit_raps: empty lambda grid");
  }
  if (probs.rows() < 2) {
    throw FitError("fit_raps: need at least two calibration points for the tuning split");
  }
  const auto halves = split_indices(probs.rows(), SplitSpec{options.seed, {0.5, 0.5}});
  const auto &tune = halves[0];
  const auto &holdout = halves[1];

  std::vector<Index> ranks;
  ranks.reserve(tune.size());
  for (const Index i : tune) {
    ranks.push_back(class_rank(probs.row(i), static_cast<Index>(labels[static_cast<std::size_t>(i)])));
  }
  std::sort(ranks.begin(), ranks.end());
  const auto pos = static_cast<Index>(std::ceil((1.0 - alpha) * static_cast<double>(ranks.size()) - 1e-9));
  const Index k_reg = ranks[static_cast<std::size_t>(std::clamp<Index>(pos, 1, static_cast<Index>(ranks.size())) - 1)];

  double best_size = kInf;
  double best_lambda = options.lambda_grid.front();
  std::vector<double> sizes;
  for (const double lambda : options.lambda_grid) {
    if (!(lambda >= 0.0)) {
      throw ArgumentError("fit_raps: lambda values must be non-negative");
    }
    const double q = conformal_quantile(scores_for(probs, labels, holdout, true, k_reg, lambda), alpha);
    double total = 0.0;
    for (const Index i : tune) {
      total += static_cast<double>(set_size(probs.row(i), q, true, k_reg, lambda));
    }
    sizes.push_back(total / static_cast<double>(tune.size()));
    best_size = std::min(best_size, sizes.back());
  }
  bool chosen = false;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] <= best_size + 1e-9 && (!chosen || options.lambda_grid[j] > best_lambda)) {
      best_lambda = options.lambda_grid[j];
      chosen = true;
    }
  }

  ConformalModel model;
  model.method = ConformalMethod::raps;
  model.alpha = alpha;
  model.k_reg = k_reg;
  model.lambda_reg = best_lambda;
  model.q_hat = conformal_quantile(scores_for(probs, labels, all_rows(probs.rows()), true, k_reg, best_lambda), alpha);
  return model;
}

ConformalModel fit_aa(const Matrix &probs, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
                      double alpha, ConformalMethod method, const AaOptions &options) {
  check_alpha(alpha);
  if (options.K < 1) {
    throw ArgumentError("fit_aa: K must be at least 1");
  }
  if (atypicality.size() != probs.rows()) {
    throw ShapeError("fit_aa: atypicality length does not match the number of rows");
  }
  const bool regularized = method == ConformalMethod::raps || method == ConformalMethod::aa_raps;
  ConformalModel marginal = regularized ? fit_raps(probs, labels, alpha, options.raps) : fit_aps(probs, labels, alpha);

  ConformalModel model;
  model.method = regularized ? ConformalMethod::aa_raps : ConformalMethod::aa_aps;
  model.alpha = alpha;
  model.k_reg = marginal.k_reg;
  model.lambda_reg = marginal.lambda_reg;

  const auto pred = predictions(probs);
  model.conf_edges = quantile_edges(pred.confidence, options.K);
  model.atyp_edges = quantile_edges(atypicality, options.K);
  const auto conf_group = assign_groups(pred.confidence, model.conf_edges);
  const auto atyp_group = assign_groups(atypicality, model.atyp_edges);

  const auto n_cells = static_cast<std::size_t>(options.K * options.K);
  std::vector<std::vector<Index>> members(n_cells);
  for (std::size_t i = 0; i < conf_group.size(); ++i) {
    members[static_cast<std::size_t>(conf_group[i] * options.K + atyp_group[i])].push_back(static_cast<Index>(i));
  }
  Index undersized = 0;
  for (const auto &rows : members) {
    if (static_cast<Index>(rows.size()) < options.min_cell) {
      ++undersized;
      model.group_q.push_back(marginal.q_hat);
      continue;
    }
    model.group_q.push_back(
        conformal_quantile(scores_for(probs, labels, rows, regularized, model.k_reg, model.lambda_reg), alpha));
  }
  if (undersized > 0) {
    warn("fit_aa: " + std::to_string(undersized) + " of " + std::to_string(n_cells) + " cells have fewer than " +
         std::to_string(options.min_cell) + " calibration points and use the marginal threshold");
  }
  return model;
}

// ---------------------------------------------------------------------------

PredictionSet predict_set(const ConformalModel &model, const Eigen::Ref<const RowVector<double>> &probs,
                          std::optional<double> atypicality) {
  const auto order = descending_order(probs);
  const double q = model.threshold(probs(order.front()), atypicality);
  const bool regularized = model.method == ConformalMethod::raps || model.method == ConformalMethod::aa_raps;
  const Index size = set_size(probs, q, regularized, model.k_reg, model.lambda_reg);
  return PredictionSet(order.begin(), order.begin() + size);
}

std::vector<PredictionSet> predict_sets(const ConformalModel &model, const Matrix &probs,
                                        const std::optional<VectorXd> &atypicality, unsigned threads) {
  if (is_grouped(model.method) && !atypicality) {
    throw ArgumentError("conformal: method " + method_name(model.method) + " needs atypicality values");
  }
  if (atypicality && atypicality->size() != probs.rows()) {
    throw ShapeError("predict_sets: atypicality length does not match the number of rows");
  }
  std::vector<PredictionSet> sets(static_cast<std::size_t>(probs.rows()));
  parallel_for(sets.size(), threads, [&](std::size_t i) {
    const auto row = static_cast<Index>(i);
    sets[i] = predict_set(model, probs.row(row),
                          atypicality ? std::optional<double>((*atypicality)(row)) : std::nullopt);
  });
  return sets;
}

bool set_contains(const PredictionSet &set, Index y) { return std::find(set.begin(), set.end(), y) != set.end(); }

CoverageReport coverage_report(const std::vector<PredictionSet> &sets, const Labels &labels,
                               const std::optional<VectorXd> &group_values, Index K) {
  if (sets.size() != labels.size()) {
    throw ShapeError("coverage_report: " + std::to_string(sets.size()) + " sets for " +
                     std::to_string(labels.size()) + " labels");
  }
  CoverageReport report;
  std::vector<Index> groups(sets.size(), 0);
  if (group_values) {
    if (group_values->size() != static_cast<Index>(sets.size())) {
      throw ShapeError("coverage_report: group values length does not match the number of sets");
    }
    report.edges = quantile_edges(*group_values, K);
    groups = assign_groups(*group_values, report.edges);
  } else {
    report.edges = {-kInf, kInf};
  }
  const auto n_groups = report.edges.size() - 1;
  report.groups.assign(n_groups, CoverageGroup{});
  std::vector<double> hits(n_groups, 0.0), sizes(n_groups, 0.0);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    ++report.groups[g].count;
    hits[g] += set_contains(sets[i], static_cast<Index>(labels[i])) ? 1.0 : 0.0;
    sizes[g] += static_cast<double>(sets[i].size());
  }
  for (std::size_t g = 0; g < n_groups; ++g) {
    auto &entry = report.groups[g];
    if (entry.count == 0) {
      entry.coverage = entry.mean_size = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    entry.coverage = hits[g] / static_cast<double>(entry.count);
    entry.mean_size = sizes[g] / static_cast<double>(entry.count);
  }
  return report;
}

} // namespace atypicalib
