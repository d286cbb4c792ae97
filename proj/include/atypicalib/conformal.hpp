#pragma once

#include "atypicalib/core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace atypicalib {

enum class ConformalMethod { aps, raps, aa_aps, aa_raps };

std::string method_name(ConformalMethod method);
ConformalMethod parse_method(const std::string &name);
bool is_grouped(ConformalMethod method);

struct ConformalModel {
  ConformalMethod method = ConformalMethod::aps;
  double alpha = 0.05;
  double q_hat = 0.0;                // marginal threshold (aps, raps)
  std::vector<double> group_q;       // K_c x K_a, row-major (aa_aps, aa_raps)
  std::vector<double> conf_edges;    // K_c + 1
  std::vector<double> atyp_edges;    // K_a + 1
  Index k_reg = 0;
  double lambda_reg = 0.0;

  /// Threshold that applies to a point with this confidence and atypicality.
  double threshold(double confidence, std::optional<double> atypicality) const;
};

/// Class indices ordered by descending probability, ties to the lower index.
std::vector<Index> descending_order(const Eigen::Ref<const RowVector<double>> &probs);

/// 1-based position of y in descending_order.
Index class_rank(const Eigen::Ref<const RowVector<double>> &probs, Index y);

/// Cumulative sorted probability through y.
double aps_score(const Eigen::Ref<const RowVector<double>> &probs, Index y);

/// aps_score + lambda * max(0, rank(y) - k_reg).
double raps_score(const Eigen::Ref<const RowVector<double>> &probs, Index y, Index k_reg, double lambda_reg);

/// Rank ceil((N + 1)(1 - alpha)) among the sorted scores; +inf once the rank
/// exceeds N.
double conformal_quantile(std::vector<double> scores, double alpha);

/// ceil((N + 1)(1 - alpha)), robust to the representation error of alpha.
Index conformal_rank(Index n, double alpha);

ConformalModel fit_aps(const Matrix &probs, const Labels &labels, double alpha);

struct RapsOptions {
  std::vector<double> lambda_grid{0.001, 0.01, 0.1, 0.2, 0.5};
  /// Seed of the 50/50 tuning split.
  std::uint64_t seed = 0;
};

/// k_reg from true-label ranks on one half, lambda by the smallest mean set
/// size on that half (largest lambda among ties), then q_hat on all data.
ConformalModel fit_raps(const Matrix &probs, const Labels &labels, double alpha, const RapsOptions &options = {});

struct AaOptions {
  Index K = 6;
  /// Cells with fewer calibration points use the marginal threshold.
  Index min_cell = 20;
  RapsOptions raps{};
};

/// One threshold per confidence x atypicality quantile cell. `method` is the
/// subroutine, aps or raps.
ConformalModel fit_aa(const Matrix &probs, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
                      double alpha, ConformalMethod method, const AaOptions &options = {});

using PredictionSet = std::vector<Index>;

/// Classes whose score does not exceed the applicable threshold, in
/// descending probability order. The top class is always included.
PredictionSet predict_set(const ConformalModel &model, const Eigen::Ref<const RowVector<double>> &probs,
                          std::optional<double> atypicality = std::nullopt);

std::vector<PredictionSet> predict_sets(const ConformalModel &model, const Matrix &probs,
                                        const std::optional<VectorXd> &atypicality = std::nullopt,
                                        unsigned threads = 1);

struct CoverageGroup {
  Index count = 0;
  double coverage = 0.0;
  double mean_size = 0.0;
};

struct CoverageReport {
  std::vector<double> edges; // K + 1, or (-inf, +inf) without group values
  std::vector<CoverageGroup> groups;
};

CoverageReport coverage_report(const std::vector<PredictionSet> &sets, const Labels &labels,
                               const std::optional<VectorXd> &group_values = std::nullopt, Index K = 1);

bool set_contains(const PredictionSet &set, Index y);

} // namespace atypicalib
