#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace profuse {

// Row-major throughout: checkpoint and embedding files store row-major
// float arrays, and pooling/attention code indexes rows as instances.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Follow-up time in months plus event indicator (true = recurrence observed).
struct SurvivalLabel {
  double time_months = 0.0;
  bool event = false;
};

inline void validate_labels(const std::vector<SurvivalLabel>& labels) {
  for (const auto& l : labels) {
    if (!(l.time_months > 0.0) || !std::isfinite(l.time_months))
      throw std::invalid_argument("survival time must be positive and finite");
  }
}

/// Log-risk with its derived scales. risk * ttr == 1 up to rounding.
struct RiskScore {
  double log_risk = 0.0;
  double risk = 1.0;
  double ttr = 1.0;
};

inline RiskScore make_risk_score(double log_risk) {
  if (!std::isfinite(log_risk)) throw std::invalid_argument("non-finite input");
  return RiskScore{log_risk, std::exp(log_risk), std::exp(-log_risk)};
}

}  // namespace profuse
