#pragma once

#include "atypicalib/core.hpp"

#include <string>
#include <vector>

namespace atypicalib {

struct BinStats {
  double lower = 0.0;
  double upper = 0.0;
  Index count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

/// Predicted class (ties to the lowest index) and its probability, per row.
struct Predictions {
  std::vector<Index> label;
  VectorXd confidence;
};

Predictions predictions(const Matrix &probs);

/// Index of the equal-width confidence bin (0-based): ceil(conf * M) - 1,
/// with conf = 0 placed in the first bin.
Index confidence_bin(double confidence, Index n_bins);

/// M equal-width confidence bins over (0, 1].
std::vector<BinStats> calibration_bins(const Matrix &probs, const Labels &labels, Index n_bins = 10);

double ece(const Matrix &probs, const Labels &labels, Index n_bins = 10);
double rmsce(const Matrix &probs, const Labels &labels, Index n_bins = 10);
double nll(const Matrix &probs, const Labels &labels);
double accuracy(const Matrix &probs, const Labels &labels);

/// K+1 quantile edges: -inf, the order statistics of rank floor(jN/K) for
/// j = 1..K-1 (1-based ranks), then +inf. Groups are (e_k, e_{k+1}].
std::vector<double> quantile_edges(const Eigen::Ref<const VectorXd> &values, Index K);

/// Group of `value` under `edges`: the first k with value <= e_{k+1}.
/// +inf always lands in the last group.
Index quantile_group(double value, const std::vector<double> &edges);

std::vector<Index> assign_groups(const Eigen::Ref<const VectorXd> &values, const std::vector<double> &edges);

enum class Metric { ece, rmsce, accuracy, nll };

Metric parse_metric(const std::string &name);
std::string metric_name(Metric metric);

double evaluate_metric(Metric metric, const Matrix &probs, const Labels &labels, Index n_bins = 10);

struct GroupMetrics {
  Metric metric = Metric::ece;
  std::vector<double> edges;
  std::vector<double> values; // NaN for empty groups
  std::vector<Index> counts;
};

GroupMetrics groupwise(Metric metric, const Matrix &probs, const Labels &labels,
                       const Eigen::Ref<const VectorXd> &group_values, Index K, Index n_bins = 10);

struct GridCell {
  Index count = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double gap = 0.0; // mean_confidence - accuracy; NaN in empty cells
};

struct QuantileGrid {
  std::vector<double> conf_edges;
  std::vector<double> atyp_edges;
  std::vector<GridCell> cells; // row-major, index conf_group * K_a + atyp_group

  Index conf_groups() const { return static_cast<Index>(conf_edges.size()) - 1; }
  Index atyp_groups() const { return static_cast<Index>(atyp_edges.size()) - 1; }
  const GridCell &cell(Index conf_group, Index atyp_group) const {
    return cells[static_cast<std::size_t>(conf_group * atyp_groups() + atyp_group)];
  }
};

QuantileGrid grid_report(const Matrix &probs, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
                         Index K_conf, Index K_atyp);

/// Shared input validation: rows are distributions, labels index columns.
void check_probs_labels(const Matrix &probs, const Labels &labels, const char *where);

} // namespace atypicalib
