#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "profuse/types.hpp"

namespace profuse::survival {

/// Negative log partial likelihood with Breslow handling of tied event
/// times: every event at time t shares the risk set { j : t_j >= t }.
/// Stabilized with a running log-sum-exp over the time-sorted suffix.
double cox_loss(const Vector& log_risks, const std::vector<SurvivalLabel>& labels);

/// d(loss)/d(log_risk_k) for every subject. Components sum to zero.
Vector cox_loss_gradient(const Vector& log_risks, const std::vector<SurvivalLabel>& labels);

/// Loss and gradient in one sweep (shared risk-set pass).
struct CoxLossGrad {
  double loss;
  Vector grad;
};
CoxLossGrad cox_loss_with_gradient(const Vector& log_risks,
                                   const std::vector<SurvivalLabel>& labels);

/// Linear Cox regressor; h0 is the baseline log-risk, fixed at 0 within a
/// cohort.
struct CoxRegressor {
  Vector beta;
  double h0 = 0.0;
};

double predict_log_risk(const CoxRegressor& model, const Vector& s);

/// exp(-log_risk); strictly decreasing rank-preserving proxy for time to
/// recurrence, not calibrated months.
double ttr_from_log_risk(double log_risk);

struct FitConfig {
  double tolerance = 1e-6;  // gradient max-norm
  int max_iterations = 500;
};

struct FitResult {
  CoxRegressor model;
  bool converged = false;
  int iterations = 0;
  double grad_max_norm = 0.0;
};

/// Fits beta by Newton-Raphson with step halving; falls back to a scaled
/// gradient step when the Hessian is not positive definite. Requires more
/// events than covariates and a non-degenerate design.
FitResult fit_cph(const Matrix& features, const std::vector<SurvivalLabel>& labels,
                  const FitConfig& config = {});

/// Harrell's concordance index. A pair (i, j) is comparable when
/// t_i < t_j and subject i had the event, or t_i == t_j and exactly one of
/// the two had the event (the event subject must rank higher). Risk ties
/// count 0.5.
double concordance_index(const Vector& log_risks, const std::vector<SurvivalLabel>& labels);

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked
/// correctly, ties counted 0.5.
double roc_auc(const Vector& scores, const std::vector<char>& binary_labels);

}  // namespace profuse::survival
