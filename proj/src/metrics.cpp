#include "atypicalib/metrics.hpp"

#include "atypicalib/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace atypicalib {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix select_rows(const Matrix &m, const std::vector<Index> &rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Index>(k)) = m.row(rows[k]);
  }
  return out;
}

Labels select_labels(const Labels &labels, const std::vector<Index> &rows) {
  Labels out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out[k] = labels[static_cast<std::size_t>(rows[k])];
  }
  return out;
}

} // namespace

void check_probs_labels(const Matrix &probs, const Labels &labels, const char *where) {
  if (static_cast<Index>(labels.size()) != probs.rows()) {
    throw ShapeError(std::string(where) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.rows()) + " rows");
  }
  if (!probs.allFinite() || (probs.array() < 0.0).any()) {
    throw DataError(std::string(where) + ": probabilities must be finite and non-negative");
  }
  for (Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
      throw DataError(std::string(where) + ": row " + std::to_string(i) + " does not sum to 1");
    }
  }
  for (const auto y : labels) {
    if (static_cast<Index>(y) >= probs.cols()) {
      throw DataError(std::string(where) + ": label " + std::to_string(y) + " outside [0, " +
                      std::to_string(probs.cols()) + ")");
    }
  }
}

Predictions predictions(const Matrix &probs) {
  Predictions p;
  p.label.resize(static_cast<std::size_t>(probs.rows()));
  p.confidence.resize(probs.rows());
  for (Index i = 0; i < probs.rows(); ++i) {
    const Index best = argmax(probs.row(i));
    p.label[static_cast<std::size_t>(i)] = best;
    p.confidence(i) = probs(i, best);
  }
  return p;
}

Index confidence_bin(double confidence, Index n_bins) {
  const auto bin = static_cast<Index>(std::ceil(confidence * static_cast<double>(n_bins)));
  return std::clamp<Index>(bin, 1, n_bins) - 1;
}

std::vector<BinStats> calibration_bins(const Matrix &probs, const Labels &labels, Index n_bins) {
  if (n_bins < 1) {
    throw ArgumentError("calibration bins: need at least one bin");
  }
  check_probs_labels(probs, labels, "calibration bins");
  const auto pred = predictions(probs);
  std::vector<BinStats> bins(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(bins.size(), 0.0);
  std::vector<double> hits(bins.size(), 0.0);
  for (Index i = 0; i < probs.rows(); ++i) {
    const auto b = static_cast<std::size_t>(confidence_bin(pred.confidence(i), n_bins));
    ++bins[b].count;
    conf_sum[b] += pred.confidence(i);
    if (pred.label[static_cast<std::size_t>(i)] == static_cast<Index>(labels[static_cast<std::size_t>(i)])) {
      hits[b] += 1.0;
    }
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lower = static_cast<double>(b) / static_cast<double>(n_bins);
    bins[b].upper = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    if (bins[b].count > 0) {
      bins[b].mean_confidence = conf_sum[b] / static_cast<double>(bins[b].count);
      bins[b].accuracy = hits[b] / static_cast<double>(bins[b].count);
    }
  }
  return bins;
}

double ece(const Matrix &probs, const Labels &labels, Index n_bins) {
  const auto bins = calibration_bins(probs, labels, n_bins);
  const double n = static_cast<double>(probs.rows());
  double total = 0.0;
  for (const auto &b : bins) {
    if (b.count > 0) {
      total += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.mean_confidence);
    }
  }
  return total;
}

double rmsce(const Matrix &probs, const Labels &labels, Index n_bins) {
  const auto bins = calibration_bins(probs, labels, n_bins);
  const double n = static_cast<double>(probs.rows());
  double total = 0.0;
  Index occupied = 0;
  double only_gap = 0.0;
  for (const auto &b : bins) {
    if (b.count > 0) {
      const double gap = b.accuracy - b.mean_confidence;
      total += static_cast<double>(b.count) / n * gap * gap;
      ++occupied;
      only_gap = std::abs(gap);
    }
  }
  // One occupied bin: weight is exactly 1, return |gap| without a sqrt round trip.
  if (occupied == 1) {
    return only_gap;
  }
  return std::sqrt(total);
}

double nll(const Matrix &probs, const Labels &labels) {
  check_probs_labels(probs, labels, "nll");
  double total = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    total -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
  }
  return total / static_cast<double>(probs.rows());
}

double accuracy(const Matrix &probs, const Labels &labels) {
  check_probs_labels(probs, labels, "accuracy");
  const auto pred = predictions(probs);
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += pred.label[i] == static_cast<Index>(labels[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------

std::vector<double> quantile_edges(const Eigen::Ref<const VectorXd> &values, Index K) {
  if (K < 1) {
    throw ArgumentError("quantile_edges: K must be at least 1");
  }
  const Index n = values.size();
  if (n < K) {
    throw ArgumentError("quantile_edges: " + std::to_string(n) + " values for " + std::to_string(K) + " groups");
  }
  std::vector<double> sorted(values.data(), values.data() + n);
  if (std::any_of(sorted.begin(), sorted.end(), [](double v) { return std::isnan(v); })) {
    throw DataError("quantile_edges: NaN value");
  }
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges(static_cast<std::size_t>(K + 1));
  edges.front() = -kInf;
  edges.back() = kInf;
  for (Index j = 1; j < K; ++j) {
    const Index rank = j * n / K; // 1-based order statistic
    edges[static_cast<std::size_t>(j)] = sorted[static_cast<std::size_t>(rank - 1)];
  }
  return edges;
}

Index quantile_group(double value, const std::vector<double> &edges) {
  const Index K = static_cast<Index>(edges.size()) - 1;
  if (value == kInf) {
    return K - 1;
  }
  // number of interior edges strictly below value
  const auto first = edges.begin() + 1;
  const auto last = edges.end() - 1;
  return static_cast<Index>(std::lower_bound(first, last, value) - first);
}

std::vector<Index> assign_groups(const Eigen::Ref<const VectorXd> &values, const std::vector<double> &edges) {
  std::vector<Index> groups(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    if (std::isnan(values(i))) {
      throw DataError("assign_groups: NaN value at index " + std::to_string(i));
    }
    groups[static_cast<std::size_t>(i)] = quantile_group(values(i), edges);
  }
  return groups;
}

Metric parse_metric(const std::string &name) {
  if (name == "ece") return Metric::ece;
  if (name == "rmsce") return Metric::rmsce;
  if (name == "accuracy") return Metric::accuracy;
  if (name == "nll") return Metric::nll;
  throw ArgumentError("unknown metric '" + name + "'");
}

std::string metric_name(Metric metric) {
  switch (metric) {
  case Metric::ece:
    return "ece";
  case Metric::rmsce:
    return "rmsce";
  case Metric::accuracy:
    return "accuracy";
  case Metric::nll:
    return "nll";
  }
  return "unknown";
}

double evaluate_metric(Metric metric, const Matrix &probs, const Labels &labels, Index n_bins) {
  switch (metric) {
  case Metric::ece:
    return ece(probs, labels, n_bins);
  case Metric::rmsce:
    return rmsce(probs, labels, n_bins);
  case Metric::accuracy:
    return accuracy(probs, labels);
  case Metric::nll:
    return nll(probs, labels);
  }
  return kNaN;
}

GroupMetrics groupwise(Metric metric, const Matrix &probs, const Labels &labels,
                       const Eigen::Ref<const VectorXd> &group_values, Index K, Index n_bins) {
  if (group_values.size() != probs.rows()) {
    throw ShapeError("groupwise: " + std::to_string(group_values.size()) + " group values for " +
                     std::to_string(probs.rows()) + " rows");
  }
  check_probs_labels(probs, labels, "groupwise");
  GroupMetrics out;
  out.metric = metric;
  out.edges = quantile_edges(group_values, K);
  const auto groups = assign_groups(group_values, out.edges);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    members[static_cast<std::size_t>(groups[i])].push_back(static_cast<Index>(i));
  }
  for (const auto &rows : members) {
    out.counts.push_back(static_cast<Index>(rows.size()));
    out.values.push_back(rows.empty() ? kNaN
                                      : evaluate_metric(metric, select_rows(probs, rows),
                                                        select_labels(labels, rows), n_bins));
  }
  return out;
}

QuantileGrid grid_report(const Matrix &probs, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
                         Index K_conf, Index K_atyp) {
  if (atypicality.size() != probs.rows()) {
    throw ShapeError("grid_report: atypicality length does not match the number of rows");
  }
  check_probs_labels(probs, labels, "grid_report");
  const auto pred = predictions(probs);
  QuantileGrid grid;
  grid.conf_edges = quantile_edges(pred.confidence, K_conf);
  grid.atyp_edges = quantile_edges(atypicality, K_atyp);
  const auto conf_group = assign_groups(pred.confidence, grid.conf_edges);
  const auto atyp_group = assign_groups(atypicality, grid.atyp_edges);

  const auto n_cells = static_cast<std::size_t>(K_conf * K_atyp);
  grid.cells.assign(n_cells, GridCell{});
  std::vector<double> conf_sum(n_cells, 0.0), hits(n_cells, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(conf_group[i] * K_atyp + atyp_group[i]);
    ++grid.cells[c].count;
    conf_sum[c] += pred.confidence(static_cast<Index>(i));
    hits[c] += pred.label[i] == static_cast<Index>(labels[i]) ? 1.0 : 0.0;
  }
  for (std::size_t c = 0; c < n_cells; ++c) {
    auto &cell = grid.cells[c];
    if (cell.count == 0) {
      cell.accuracy = cell.mean_confidence = cell.gap = kNaN;
      continue;
    }
    cell.accuracy = hits[c] / static_cast<double>(cell.count);
    cell.mean_confidence = conf_sum[c] / static_cast<double>(cell.count);
    cell.gap = cell.mean_confidence - cell.accuracy;
  }
  return grid;
}

} // namespace atypicalib
