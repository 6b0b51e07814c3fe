#include "profuse/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace profuse::survival {
namespace {

void check_inputs(const Vector& log_risks, const std::vector<SurvivalLabel>& labels) {
  if (log_risks.size() == 0 || labels.empty())
    throw std::invalid_argument("no observed events");
  if (static_cast<std::size_t>(log_risks.size()) != labels.size())
    throw std::invalid_argument("log_risks and labels length mismatch");
  for (Eigen::Index i = 0; i < log_risks.size(); ++i)
    if (!std::isfinite(log_risks[i])) throw std::invalid_argument("non-finite input");
  validate_labels(labels);
  if (std::none_of(labels.begin(), labels.end(), [](const SurvivalLabel& l) { return l.event; }))
    throw std::invalid_argument("no observed events");
}

// Indices sorted by ascending time; equal times keep original order.
std::vector<int> time_order(const std::vector<SurvivalLabel>& labels) {
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return labels[a].time_months < labels[b].time_months;
  });
  return order;
}

// Streaming log-sum-exp accumulator.
struct LogSumExp {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;  // sum of exp(x - max)

  void add(double x) {
    if (x <= max) {
      sum += std::exp(x - max);
    } else {
      sum = sum * std::exp(max - x) + 1.0;
      max = x;
    }
  }
  void add_scaled(double x, double count) {
    if (x <= max) {
      sum += count * std::exp(x - max);
    } else {
      sum = sum * std::exp(max - x) + count;
      max = x;
    }
  }
  double value() const { return max + std::log(sum); }
  bool empty() const { return sum == 0.0; }
};

}  // namespace

CoxLossGrad cox_loss_with_gradient(const Vector& log_risks,
                                   const std::vector<SurvivalLabel>& labels) {
  check_inputs(log_risks, labels);
  const int n = static_cast<int>(labels.size());
  const std::vector<int> order = time_order(labels);

  // Pass 1, descending time: log denominator per tied-time group.
  // log_denom[g] = log sum_{j : t_j >= t_g} exp(h_j).
  std::vector<double> group_log_denom;  // indexed by group, ascending time
  std::vector<int> group_first;         // first position (in `order`) of each group
  {
    LogSumExp lse;
    std::vector<double> rev_denoms;
    int pos = n - 1;
    while (pos >= 0) {
      const double t = labels[order[pos]].time_months;
      int lo = pos;
      while (lo >= 0 && labels[order[lo]].time_months == t) {
        lse.add(log_risks[order[lo]]);
        --lo;
      }
      rev_denoms.push_back(lse.value());
      group_first.push_back(lo + 1);
      pos = lo;
    }
    std::reverse(rev_denoms.begin(), rev_denoms.end());
    std::reverse(group_first.begin(), group_first.end());
    group_log_denom = std::move(rev_denoms);
  }

  // Pass 2, ascending time. An event at group time t contributes
  // exp(h_k - log_denom) to every k with t_k >= t; the cumulative factor is
  // tracked as a log-sum-exp of (-log_denom) weighted by event counts.
  double loss = 0.0;
  Vector grad = Vector::Zero(n);
  LogSumExp cum;  // logsumexp over events so far of -log_denom
  const int n_groups = static_cast<int>(group_log_denom.size());
  for (int g = 0; g < n_groups; ++g) {
    const int first = group_first[g];
    const int last = (g + 1 < n_groups) ? group_first[g + 1] : n;
    int events_here = 0;
    for (int p = first; p < last; ++p) {
      const int k = order[p];
      if (labels[k].event) {
        ++events_here;
        loss -= log_risks[k] - group_log_denom[g];
      }
    }
    if (events_here > 0) cum.add_scaled(-group_log_denom[g], events_here);
    if (!cum.empty()) {
      const double log_cum = cum.value();
      for (int p = first; p < last; ++p) {
        const int k = order[p];
        grad[k] = std::exp(log_risks[k] + log_cum) - (labels[k].event ? 1.0 : 0.0);
      }
    }
  }
  return {loss, std::move(grad)};
}

double cox_loss(const Vector& log_risks, const std::vector<SurvivalLabel>& labels) {
  check_inputs(log_risks, labels);
  const std::vector<int> order = time_order(labels);
  const int n = static_cast<int>(labels.size());

  double loss = 0.0;
  LogSumExp lse;
  int pos = n - 1;
  while (pos >= 0) {
    const double t = labels[order[pos]].time_months;
    int lo = pos;
    while (lo >= 0 && labels[order[lo]].time_months == t) {
      lse.add(log_risks[order[lo]]);
      --lo;
    }
    const double log_denom = lse.value();
    for (int p = lo + 1; p <= pos; ++p) {
      const int k = order[p];
      if (labels[k].event) loss -= log_risks[k] - log_denom;
    }
    pos = lo;
  }
  return loss;
}

Vector cox_loss_gradient(const Vector& log_risks, const std::vector<SurvivalLabel>& labels) {
  return cox_loss_with_gradient(log_risks, labels).grad;
}

double predict_log_risk(const CoxRegressor& model, const Vector& s) {
  if (s.size() != model.beta.size())
    throw std::invalid_argument("feature length does not match regressor");
  return model.h0 + model.beta.dot(s);
}

double ttr_from_log_risk(double log_risk) {
  if (!std::isfinite(log_risk)) throw std::invalid_argument("non-finite input");
  return std::exp(-log_risk);
}

namespace {

// Loss, gradient and Hessian with respect to beta, single pass over the
// time-sorted cohort (descending), with a global shift of h for stability.
struct BetaDerivatives {
  double loss = 0.0;
  Vector grad;
  Matrix hessian;
};

BetaDerivatives beta_derivatives(const Matrix& x, const Vector& h,
                                 const std::vector<SurvivalLabel>& labels,
                                 const std::vector<int>& order) {
  const int n = static_cast<int>(labels.size());
  const int p = static_cast<int>(x.cols());
  const double shift = h.maxCoeff();

  BetaDerivatives out;
  out.grad = Vector::Zero(p);
  out.hessian = Matrix::Zero(p, p);

  double s0 = 0.0;             // sum exp(h - shift) over risk set
  Vector s1 = Vector::Zero(p); // sum exp(h - shift) * x
  Matrix s2 = Matrix::Zero(p, p);

  int pos = n - 1;
  while (pos >= 0) {
    const double t = labels[order[pos]].time_months;
    int lo = pos;
    while (lo >= 0 && labels[order[lo]].time_months == t) {
      const int k = order[lo];
      const double w = std::exp(h[k] - shift);
      s0 += w;
      s1.noalias() += w * x.row(k).transpose();
      s2.noalias() += w * x.row(k).transpose() * x.row(k);
      --lo;
    }
    for (int q = lo + 1; q <= pos; ++q) {
      const int k = order[q];
      if (!labels[k].event) continue;
      const Vector mu = s1 / s0;
      out.loss -= h[k] - (std::log(s0) + shift);
      out.grad.noalias() -= x.row(k).transpose() - mu;
      out.hessian.noalias() += s2 / s0 - mu * mu.transpose();
    }
    pos = lo;
  }
  return out;
}

}  // namespace

FitResult fit_cph(const Matrix& features, const std::vector<SurvivalLabel>& labels,
                  const FitConfig& config) {
  const int n = static_cast<int>(features.rows());
  const int p = static_cast<int>(features.cols());
  if (n == 0 || static_cast<std::size_t>(n) != labels.size())
    throw std::invalid_argument("features and labels length mismatch");
  validate_labels(labels);
  const int n_events =
      static_cast<int>(std::count_if(labels.begin(), labels.end(),
                                     [](const SurvivalLabel& l) { return l.event; }));
  if (n_events == 0) throw std::invalid_argument("no observed events");
  if (p >= n_events)
    throw std::invalid_argument("covariate count must be below the event count");
  for (int j = 0; j < p; ++j) {
    const double lo = features.col(j).minCoeff();
    const double hi = features.col(j).maxCoeff();
    if (!(std::isfinite(lo) && std::isfinite(hi)))
      throw std::invalid_argument("non-finite input");
    if (lo == hi) throw std::invalid_argument("degenerate covariate");
  }

  const std::vector<int> order = time_order(labels);
  Vector beta = Vector::Zero(p);
  Vector h = Vector::Zero(n);
  BetaDerivatives d = beta_derivatives(features, h, labels, order);

  FitResult result;
  int iter = 0;
  for (; iter < config.max_iterations; ++iter) {
    result.grad_max_norm = d.grad.cwiseAbs().maxCoeff();
    if (result.grad_max_norm < config.tolerance) {
      result.converged = true;
      break;
    }

    Vector step;
    Eigen::LLT<Matrix> llt(d.hessian);
    if (llt.info() == Eigen::Success) {
      step = llt.solve(-d.grad);
    } else {
      step = -d.grad / std::max(1.0, d.grad.cwiseAbs().maxCoeff());
    }

    // Step halving until the loss improves (or the step vanishes).
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      const Vector candidate = beta + scale * step;
      const Vector hc = features * candidate;
      BetaDerivatives dc = beta_derivatives(features, hc, labels, order);
      if (std::isfinite(dc.loss) && dc.loss < d.loss) {
        beta = candidate;
        d = std::move(dc);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;  // stalled; reported via grad_max_norm below
  }
  result.grad_max_norm = d.grad.cwiseAbs().maxCoeff();
  result.converged = result.converged || result.grad_max_norm < config.tolerance;
  result.iterations = iter;
  result.model.beta = std::move(beta);
  result.model.h0 = 0.0;
  return result;
}

double concordance_index(const Vector& log_risks, const std::vector<SurvivalLabel>& labels) {
  check_inputs(log_risks, labels);
  const int n = static_cast<int>(labels.size());
  if (n < 2) throw std::invalid_argument("no comparable pairs");
  const std::vector<int> order = time_order(labels);

  // Sweep ascending in time: each event subject is compared against every
  // subject with a strictly later time, plus same-time subjects without an
  // event.
  double comparable = 0.0;
  double score = 0.0;
  for (int a = 0; a < n; ++a) {
    const int i = order[a];
    if (!labels[i].event) continue;
    const double ti = labels[i].time_months;
    const double hi = log_risks[i];
    for (int b = a + 1; b < n; ++b) {
      const int j = order[b];
      if (labels[j].time_months == ti && labels[j].event) continue;
      comparable += 1.0;
      if (hi > log_risks[j])
        score += 1.0;
      else if (hi == log_risks[j])
        score += 0.5;
    }
    // Same-time censored subjects that sorted before position a.
    for (int b = a - 1; b >= 0 && labels[order[b]].time_months == ti; --b) {
      const int j = order[b];
      if (labels[j].event) continue;
      comparable += 1.0;
      if (hi > log_risks[j])
        score += 1.0;
      else if (hi == log_risks[j])
        score += 0.5;
    }
  }
  if (comparable == 0.0) throw std::invalid_argument("no comparable pairs");
  return score / comparable;
}

double roc_auc(const Vector& scores, const std::vector<char>& binary_labels) {
  if (scores.size() == 0 || static_cast<std::size_t>(scores.size()) != binary_labels.size())
    throw std::invalid_argument("scores and labels length mismatch");
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i])) throw std::invalid_argument("non-finite input");
  const int n = static_cast<int>(scores.size());

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });

  // Rank-sum with midranks for tied scores.
  double n_pos = 0.0, n_neg = 0.0, rank_sum_pos = 0.0;
  int a = 0;
  while (a < n) {
    int b = a;
    while (b < n && scores[order[b]] == scores[order[a]]) ++b;
    const double midrank = 0.5 * (a + b - 1) + 1.0;  // ranks are 1-based
    for (int q = a; q < b; ++q) {
      if (binary_labels[order[q]]) {
        n_pos += 1.0;
        rank_sum_pos += midrank;
      } else {
        n_neg += 1.0;
      }
    }
    a = b;
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw std::invalid_argument("degenerate labels");
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

}  // namespace profuse::survival
