#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "profuse/nn.hpp"
#include "profuse/rng.hpp"
#include "profuse/types.hpp"

namespace profuse::experiment {

enum class Optimizer { adam, adamw };
Optimizer optimizer_from_string(const std::string& name);
std::string to_string(Optimizer opt);

struct TrainConfig {
  Optimizer optimizer = Optimizer::adamw;
  double learning_rate = 1e-3;   // per-modality encoders default to 1e-4 instead
  double weight_decay = 1e-2;    // decoupled; adamw only
  int max_epochs = 500;
  int min_epochs_before_stop = 250;
  int patience = 50;
  std::uint64_t seed = 1;
};

/// First/second-moment accumulators aligned with a parameter list.
struct AdamState {
  std::vector<Matrix> m, v;
  long step_count = 0;

  void init(const std::vector<nn::NamedParam>& params);
};

/// Bias-corrected Adam step (beta1 0.9, beta2 0.999, eps 1e-8). For adamw the
/// decoupled weight decay is applied to the parameter before the update;
/// weight_decay = 0 makes adamw bit-equal to adam.
void adam_step(const std::vector<nn::NamedParam>& params, AdamState& state,
               const TrainConfig& config);

/// Anything trainable by full-batch Cox loss over cohort subject indices.
/// Instances are single-threaded: forward caches activations for backward.
class CoxBatchModel {
 public:
  virtual ~CoxBatchModel() = default;
  virtual std::vector<nn::NamedParam> params() = 0;
  /// Log-risks for the given cohort indices. `training` enables dropout
  /// (drawing from rng) and caches activations for a following backward.
  virtual Vector forward(const std::vector<int>& ids, bool training, Rng* rng) = 0;
  /// Accumulates parameter grads from d(loss)/d(log-risk) of the last
  /// training-mode forward over the same ids.
  virtual void backward(const std::vector<int>& ids, const Vector& dlr) = 0;
};

struct TrainResult {
  std::vector<Matrix> best_values;  // parameter snapshot in params() order
  double best_val_loss = 0.0;
  int best_epoch = 0;  // 1-based
  std::vector<double> train_curve, val_curve;
  std::optional<int> second_diff_epoch;  // train-curve curvature sign change
};

/// Optional observer called after every epoch with the fresh loss pair.
using EpochLogger = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Full-batch training with best-validation-loss checkpointing. Stops at
/// max_epochs, or once at least min_epochs_before_stop epochs have run and
/// validation loss has not improved for `patience` epochs. The model is left
/// at the best checkpoint.
TrainResult train_fold(CoxBatchModel& model, const std::vector<int>& train_ids,
                       const std::vector<SurvivalLabel>& train_labels,
                       const std::vector<int>& val_ids,
                       const std::vector<SurvivalLabel>& val_labels, const TrainConfig& config,
                       const EpochLogger& log = nullptr);

/// First index t >= min_epochs where the second difference of the loss curve
/// changes sign between consecutive entries (strictly opposite signs).
std::optional<int> early_stop_epoch(const std::vector<double>& curve, int min_epochs);

struct MetricsSummary {
  std::vector<double> per_fold;
  double mean = 0.0;
  double sigma = 0.0;  // population standard deviation
};

MetricsSummary summarize(const std::vector<double>& cindices);

/// Shuffled round-robin fold assignment; returns k disjoint id lists covering
/// 0..n-1. With stratify, events and censored subjects are dealt separately.
std::vector<std::vector<int>> make_folds(int n, int k, std::uint64_t seed, bool stratify,
                                         const std::vector<SurvivalLabel>* labels);

struct NestedPlan {
  struct OuterFold {
    std::vector<int> test;                     // outer hold-out
    std::vector<std::vector<int>> inner_val;   // partitions the non-test ids
  };
  std::vector<OuterFold> outer;
};

NestedPlan make_nested_plan(int n, int outer_k, int inner_k, std::uint64_t seed, bool stratify,
                            const std::vector<SurvivalLabel>* labels);

/// Complement helper: all ids of 0..n-1 not in `exclude` (order preserved).
std::vector<int> complement_ids(int n, const std::vector<int>& exclude);
std::vector<SurvivalLabel> gather_labels(const std::vector<SurvivalLabel>& labels,
                                         const std::vector<int>& ids);

using ModelBuilder = std::function<std::unique_ptr<CoxBatchModel>(std::uint64_t seed)>;

struct FoldOutcome {
  std::unique_ptr<CoxBatchModel> model;
  TrainResult result;
  std::vector<int> train_ids, val_ids;
};

/// Plain k-fold training: fold i validates on fold i's subjects and trains on
/// the rest; returns one best-checkpoint model per fold.
std::vector<FoldOutcome> run_kfold_train(const std::vector<SurvivalLabel>& labels,
                                         const ModelBuilder& builder, const TrainConfig& config,
                                         int k, bool stratify, int parallelism);

/// 5x5-style nested cross-validation: per (outer, inner) pair, train on
/// inner-train, select on inner-val, score a C-index on the outer hold-out.
MetricsSummary run_nested_cv(const std::vector<SurvivalLabel>& labels,
                             const ModelBuilder& builder, const TrainConfig& config, int outer_k,
                             int inner_k, bool stratify, int parallelism);

/// Runs fn(0..n_jobs-1) on a bounded worker pool; exceptions are rethrown
/// after the join, lowest job index first.
void parallel_for(int n_jobs, int parallelism, const std::function<void(int)>& fn);

}  // namespace profuse::experiment
