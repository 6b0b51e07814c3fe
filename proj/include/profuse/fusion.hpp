#pragma once

#include <string>
#include <utility>
#include <vector>

#include "profuse/nn.hpp"
#include "profuse/rng.hpp"
#include "profuse/types.hpp"

namespace profuse::fusion {

struct ModalityMask {
  bool clinical = true;
  bool pathology = true;
  bool radiology = true;

  bool any() const { return clinical || pathology || radiology; }
};

enum class AggMode { median, mean };
AggMode agg_mode_from_string(const std::string& name);
std::string to_string(AggMode mode);

/// Late-fusion model rows mirroring the result grid: single modalities, the
/// clinical+pathology pair, and the three-modality row under either
/// cross-modality reduction.
enum class Combination { C, P, R, CP, CPR_avg, CPR_med };
Combination combination_from_string(const std::string& name);
std::string to_string(Combination combo);
std::vector<Combination> all_combinations();

struct FusionConfig {
  int clinical_width = 25;
  int pooled_dim = 512;
  int latent_dim = 768;
  int layers = 4;
  int heads = 8;
  int ffn_width = 3072;
  double dropout = 0.1;
};

/// Tokenizer -> transformer -> survival-head model over the three modality
/// tokens. Works on batches: subject b owns token rows [3b, 3b+3).
struct IntermediateFusionModel {
  FusionConfig cfg;
  nn::Linear tok_clinical, tok_pathology, tok_radiology;
  nn::Parameter positions;  // one learnable row per modality slot
  nn::TransformerEncoder encoder;
  nn::Linear head;

  explicit IntermediateFusionModel(const FusionConfig& config);

  void init(Rng& rng);
  std::vector<nn::NamedParam> params(const std::string& prefix = "fusion");

  struct Cache {
    Matrix vc, vp, vr;  // inputs with absent-modality rows zeroed
    std::vector<ModalityMask> masks;
    nn::TokenMask token_mask;
    Matrix stacked;
    nn::EncoderCache encoder_cache;
    Matrix encoded;
    Matrix pooled;
  };

  /// Batched log-risks. Rows of vc/vp/vr for absent modalities are ignored
  /// entirely (the token is a zero row with mask false).
  Vector forward(const Matrix& vc, const Matrix& vp, const Matrix& vr,
                 const std::vector<ModalityMask>& masks, Cache* cache, bool training,
                 Rng* rng) const;
  void backward(const Cache& cache, const Vector& dlr);

  /// Single-subject stack: 3 x latent_dim rows in (clinical, pathology,
  /// radiology) order plus the key mask.
  std::pair<Matrix, nn::TokenMask> tokenize_and_stack(const Vector& vc, const Vector& vp,
                                                      const Vector& vr,
                                                      const ModalityMask& mask) const;
  double forward_log_risk(const Vector& vc, const Vector& vp, const Vector& vr,
                          const ModalityMask& mask) const;
};

/// Mean of per-fold log-risks for one subject.
double ensemble_intermediate(const std::vector<double>& fold_log_risks);

/// Element-wise median or mean across identically-shaped parameter sets.
/// Even-count median averages the two middle values.
std::vector<Matrix> aggregate_model_weights(const std::vector<std::vector<Matrix>>& models,
                                            AggMode mode);

/// Median or mean of the provided per-modality log-risks.
double late_fuse(const std::vector<double>& modality_log_risks, AggMode mode);

double median(std::vector<double> values);
double mean(const std::vector<double>& values);

}  // namespace profuse::fusion
