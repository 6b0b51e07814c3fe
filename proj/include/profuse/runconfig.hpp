#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "profuse/experiment.hpp"
#include "profuse/fusion.hpp"

namespace profuse::runconfig {

/// Malformed, unknown, or out-of-range configuration. The CLI maps this (and
/// bad flags) to exit code 2; runtime failures exit 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int latent_dim = 768;
  int layers = 4;
  int heads = 8;
  int ffn_width = 3072;
  double dropout = 0.1;
  int top_k = 64;        // attention-pooling keeps this many rows (<=0: all)
  int pooled_dim = 512;  // per-modality pooled feature width
  int scorer_hidden = 128;
  int radiology_hidden = 1024;  // first reduction stage for wide radiology rows
};

struct TrainingConfig {
  experiment::Optimizer optimizer = experiment::Optimizer::adamw;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  int max_epochs = 500;
  int min_epochs_before_stop = 250;
  int patience = 50;
  std::uint64_t seed = 1;
  // Per-modality pooling encoders train under their own regime.
  experiment::Optimizer encoder_optimizer = experiment::Optimizer::adam;
  double encoder_learning_rate = 1e-4;
  double encoder_weight_decay = 0.0;
};

struct CvConfig {
  enum class Mode { plain, nested };
  Mode mode = Mode::plain;
  int k = 9;        // plain mode
  int outer_k = 5;  // nested mode
  int inner_k = 5;
  bool stratify_events = false;
};

struct FusionRunConfig {
  enum class Mode { intermediate, late };
  Mode mode = Mode::intermediate;
  fusion::AggMode weight_agg = fusion::AggMode::median;  // fold model weights (MW)
  fusion::AggMode score_agg = fusion::AggMode::median;   // fold log-risk scores (LRS)
  fusion::Combination modality_combination = fusion::Combination::CPR_med;
  // When true, weight aggregation also covers the pooling encoders, not just
  // the survival heads, making all fold scorers identical.
  bool aggregate_pooling_weights = false;
};

struct DataConfig {
  std::string clinical_csv = "clinical.csv";
  std::string labels_csv = "labels.csv";
  std::string pathology_dir = "pathology";
  std::string radiology_dir = "radiology";
  int pathology_dim = 1024;
  int radiology_dim = 65536;
};

struct RunConfig {
  ModelConfig model;
  TrainingConfig training;
  CvConfig cv;
  FusionRunConfig fusion;
  DataConfig data;
};

std::string to_string(CvConfig::Mode mode);
std::string to_string(FusionRunConfig::Mode mode);

/// Parses a JSON config document. Unknown keys and type/range violations
/// throw ConfigError naming the offending key. Missing keys keep defaults.
RunConfig parse_config(const std::string& json_text, const std::string& origin);
RunConfig load_config(const std::string& path);

/// Fully-resolved echo (every field, section-ordered JSON). Runs write this
/// into their output directory so a run is reconstructible from disk.
std::string render_config(const RunConfig& config);

}  // namespace profuse::runconfig
