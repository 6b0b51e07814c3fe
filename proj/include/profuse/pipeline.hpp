#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "profuse/dataio.hpp"
#include "profuse/encoders.hpp"
#include "profuse/experiment.hpp"
#include "profuse/fusion.hpp"
#include "profuse/runconfig.hpp"
#include "profuse/types.hpp"

namespace profuse::pipeline {

/// Classical clinical regressor fitted on one training split, carrying the
/// split's imputation/normalization statistics.
struct ClinicalFoldModel {
  encoders::ClinicalStats stats;
  Vector beta;  // over the reference-dropped dummy encoding
};

ClinicalFoldModel fit_clinical(const std::vector<encoders::ClinicalRecord>& records,
                               const std::vector<SurvivalLabel>& labels,
                               const std::vector<int>& train_ids,
                               const encoders::ClinicalSchema& schema);

double clinical_log_risk(const ClinicalFoldModel& model, const encoders::ClinicalRecord& record,
                         const encoders::ClinicalSchema& schema);

/// Everything trained on one fold: the clinical regressor, both pooling
/// encoders with their survival heads, and the fused transformer regressor
/// over pooled features.
struct FoldModels {
  ClinicalFoldModel clinical;
  encoders::PathologyNet pathology;
  encoders::RadiologyNet radiology;
  fusion::IntermediateFusionModel fused;
  experiment::TrainResult pathology_train, radiology_train, fusion_train;
  std::vector<int> train_ids, val_ids;

  FoldModels(const runconfig::RunConfig& config, const encoders::ClinicalSchema& schema);
};

/// Optional per-epoch console hook: receives fully formatted lines.
using LogSink = std::function<void(const std::string&)>;

/// Trains the full fold stack. Stage order: clinical fit, pathology encoder,
/// radiology encoder, fused regressor on pooled features. Neural stages use
/// seeds derived from fold_seed, so the fold is reproducible in isolation.
FoldModels train_fold_models(const dataio::Dataset& data,
                             const encoders::ClinicalSchema& schema,
                             const runconfig::RunConfig& config,
                             const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                             std::uint64_t fold_seed, const LogSink& log = nullptr);

/// Intermediate-fusion log-risk for one subject under one fold's stack
/// (fold-specific pooled features and clinical statistics). Optionally
/// restricts the modality mask, e.g. to evaluate a clinical+pathology row.
double intermediate_log_risk(const FoldModels& fold, const dataio::Dataset& data, int subject,
                             const encoders::ClinicalSchema& schema,
                             const fusion::ModalityMask& restrict_mask = {});

/// Late-fusion scoring across folds. Survival heads are weight-aggregated
/// across folds per mode (both modes precomputed); pooled features stay
/// fold-specific unless aggregate_pooling extends aggregation to the
/// reduction and scorer weights. Clinical scores are always per-fold — the
/// classical regressor has no neural weights to aggregate.
class LateScorer {
 public:
  LateScorer(std::vector<const FoldModels*> folds, bool aggregate_pooling);

  struct SubjectScores {
    std::vector<double> clinical;                  // per fold
    std::array<std::vector<double>, 2> pathology;  // indexed by AggMode (median, mean)
    std::array<std::vector<double>, 2> radiology;
    fusion::ModalityMask mask;
  };

  SubjectScores score(const dataio::Dataset& data, int subject,
                      const encoders::ClinicalSchema& schema) const;

  /// One grid cell: reduce fold scores per modality by `score_agg`, then fuse
  /// across the combination's available modalities. Errors when the subject
  /// has none of the combination's modalities.
  static double reduce(const SubjectScores& scores, fusion::Combination combo,
                       fusion::AggMode weight_agg, fusion::AggMode score_agg);

 private:
  std::vector<const FoldModels*> folds_;
  bool aggregate_pooling_ = false;
  std::array<nn::Linear, 2> pathology_head_, radiology_head_;  // per weight-agg mode
  std::array<encoders::PathologyNet, 2> pathology_net_;        // used when aggregate_pooling_
  std::array<encoders::RadiologyNet, 2> radiology_net_;
};

/// Fold checkpoint IO: one tensor file holding the clinical coefficients and
/// statistics plus every neural parameter, loadable given the run config.
/// (Non-const: parameter enumeration hands out mutable views.)
void save_fold_checkpoint(const std::string& path, FoldModels& fold,
                          const encoders::ClinicalSchema& schema);
FoldModels load_fold_checkpoint(const std::string& path, const runconfig::RunConfig& config,
                                const encoders::ClinicalSchema& schema);

/// Plain k-fold training run (fold i validates on fold i): writes
/// fold_<i>/checkpoint.pfmw + curves, metrics.json, and the config echo.
void run_train(const dataio::Dataset& data, const encoders::ClinicalSchema& schema,
               const runconfig::RunConfig& config, const std::string& out_dir, int parallelism,
               int verbosity);

/// Nested outer x inner cross-validation: trains every (outer, inner) job,
/// reports the outer-holdout C-index per job in metrics.json, and writes the
/// late-fusion aggregation grid plus intermediate-fusion rows to grid.csv.
void run_nested_cv(const dataio::Dataset& data, const encoders::ClinicalSchema& schema,
                   const runconfig::RunConfig& config, const std::string& out_dir,
                   int parallelism, int verbosity);

/// Ensemble prediction from a finished run directory (all fold checkpoints).
/// Intermediate mode averages fold log-risks; late mode follows the
/// configured combination and aggregation modes.
std::vector<dataio::Prediction> predict_run(const std::string& run_dir,
                                            const dataio::Dataset& data,
                                            const encoders::ClinicalSchema& schema);

struct EvaluateOptions {
  double binarize_months = 0.0;  // > 0: also report roc_auc at this threshold
};

/// Joins predictions with labels by case id (errors list unmatched ids) and
/// writes a metrics JSON with c_index (and optionally roc_auc).
void evaluate_predictions(const std::vector<dataio::Prediction>& predictions,
                          const std::vector<dataio::LabeledCase>& labels,
                          const std::string& out_file, const EvaluateOptions& options);

/// Fold directory names: fold_<f> (plain) or fold_o<o>_i<i> (nested).
std::string fold_dir_name(int fold);
std::string fold_dir_name(int outer, int inner);

}  // namespace profuse::pipeline
