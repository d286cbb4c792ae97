#pragma once

#include "atypicalib/core.hpp"
#include "atypicalib/optim.hpp"

#include <vector>

namespace atypicalib {

// ---------------------------------------------------------------------------
// Temperature scaling
// ---------------------------------------------------------------------------

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;
/// Groups smaller than this reuse the global temperature.
inline constexpr Index kMinGroupSize = 10;

struct TemperatureModel {
  double tau = 1.0;
};

/// Mean cross-entropy of softmax(logits / tau).
double ts_nll(const Matrix &logits, const Labels &labels, double tau);

/// Minimizes ts_nll over tau in [0.05, 20]. The objective is convex in 1/tau,
/// so the stationary point is located by bisection on the sign of the
/// derivative in log tau; the result is deterministic to the last bit.
TemperatureModel fit_ts(const Matrix &logits, const Labels &labels);

Matrix apply_ts(const TemperatureModel &model, const Matrix &logits);

struct PerQuantileTsModel {
  std::vector<double> atyp_edges; // K + 1
  std::vector<double> taus;       // K
  double global_tau = 1.0;
};

PerQuantileTsModel fit_ts_per_quantile(const Matrix &logits, const Labels &labels,
                                       const Eigen::Ref<const VectorXd> &atypicality, Index K);

Matrix apply_ts_per_quantile(const PerQuantileTsModel &model, const Matrix &logits,
                             const Eigen::Ref<const VectorXd> &atypicality);

// ---------------------------------------------------------------------------
// Atypicality-aware recalibration
//
//   z_y = phi(a~) * log p(y | x) + S_y,   phi(a~) = c2 a~^2 + c1 a~ + c0,
//   a~  = (a - a_mean) / a_std,
// followed by a softmax over y. log p is the log-softmax of the logits.
// ---------------------------------------------------------------------------

struct AarModel {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  VectorXd s;
  double a_mean = 0.0;
  double a_std = 1.0;

  Index n_classes() const { return s.size(); }
  double normalize(double a) const { return (a - a_mean) / a_std; }
  double phi(double a) const {
    const double t = normalize(a);
    return (c2 * t + c1) * t + c0;
  }
};

/// Mean cross-entropy of the AAR family over theta = (c0, c1, c2, S_0..S_{C-1})
/// with its analytic gradient. Atypicality is taken already normalized.
class AarObjective {
public:
  AarObjective(const Matrix &logits, const Labels &labels, VectorXd normalized_atypicality);

  Index n_params() const { return 3 + log_probs_.cols(); }
  double operator()(const VectorXd &theta, VectorXd &grad) const;
  double value(const VectorXd &theta) const;

private:
  Matrix log_probs_;
  Labels labels_;
  VectorXd atyp_;
};

struct AarOptions {
  optim::LbfgsOptions<double> lbfgs{};
};

struct AarFit {
  AarModel model;
  optim::MinimizeSummary<double> summary;
};

/// Fits (c0, c1, c2, S) by L-BFGS from c = 0, S = 1. After the fit S is shifted
/// to sum to zero, which leaves every prediction unchanged. A run that stops
/// before the gradient tolerance still returns its best iterate; check
/// `summary.converged`.
AarFit fit_aar(const Matrix &logits, const Labels &labels, const Eigen::Ref<const VectorXd> &atypicality,
               const AarOptions &options = {});

Matrix apply_aar(const AarModel &model, const Matrix &logits, const Eigen::Ref<const VectorXd> &atypicality);

// ---------------------------------------------------------------------------
// Content-free calibration: softmax(diag(p_cf)^-1 p)
// ---------------------------------------------------------------------------

struct CfModel {
  VectorXd w;
};

CfModel fit_cf(const Matrix &content_free_probs);
Matrix apply_cf(const CfModel &model, const Matrix &probs);

// ---------------------------------------------------------------------------
// Group-conditional temperature scaling
// ---------------------------------------------------------------------------

struct GroupTsModel {
  std::vector<std::uint32_t> group_ids; // sorted
  std::vector<double> taus;
  double fallback_tau = 1.0;

  double tau_for(std::uint32_t group) const;
};

GroupTsModel fit_group_ts(const Matrix &logits, const Labels &labels, const std::vector<std::uint32_t> &groups);
Matrix apply_group_ts(const GroupTsModel &model, const Matrix &logits, const std::vector<std::uint32_t> &groups);

} // namespace atypicalib
