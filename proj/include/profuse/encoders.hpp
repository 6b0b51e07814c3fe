#pragma once

#include <optional>
#include <string>
#include <vector>

#include "profuse/nn.hpp"
#include "profuse/rng.hpp"
#include "profuse/types.hpp"

namespace profuse::encoders {

struct AttributeSpec {
  std::string name;
  bool numeric = false;
  std::vector<std::string> categories;  // empty for numeric attributes

  int one_hot_width() const { return numeric ? 1 : static_cast<int>(categories.size()); }
  int dummy_width() const {
    return numeric ? 1 : static_cast<int>(categories.size()) - 1;
  }
};

/// Ordered attribute encoding rules. The default totals width 25: age (1),
/// ISUP grade (5), pT stage (9), and five yes/no attributes (2 each).
struct ClinicalSchema {
  std::vector<AttributeSpec> attributes;

  int one_hot_width() const;
  /// Reference-category-dropped width (numerics unchanged).
  int dummy_width() const;
  int category_index(int attribute, const std::string& value) const;

  static ClinicalSchema default_schema();
};

/// One subject's raw attribute values in schema order; nullopt = unknown.
struct ClinicalRecord {
  std::string case_id;
  std::vector<std::optional<std::string>> values;
};

/// Training-split imputation and normalization statistics.
struct ClinicalStats {
  std::vector<double> mean;      // per attribute; meaningful for numerics
  std::vector<double> stdev;     // population standard deviation
  std::vector<int> mode_index;   // per attribute; meaningful for categoricals
};

ClinicalStats compute_clinical_stats(const std::vector<ClinicalRecord>& records,
                                     const ClinicalSchema& schema);

/// Z-scored numerics + one-hot categoricals, concatenated in schema order.
Vector encode_clinical_vector(const ClinicalRecord& record, const ClinicalSchema& schema,
                              const ClinicalStats& stats);

/// Reference-dropped dummy coding for the classical CPH fit; numerics are
/// z-scored with the same training stats for solver conditioning.
Vector encode_clinical_dummy(const ClinicalRecord& record, const ClinicalSchema& schema,
                             const ClinicalStats& stats);

Matrix encode_clinical_matrix(const std::vector<ClinicalRecord>& records,
                              const ClinicalSchema& schema, const ClinicalStats& stats,
                              bool dummy);

/// Attention scorer shared by both pooling encoders:
/// linear(pooled->hidden) -> tanh -> linear(hidden->1).
struct AttentionScorer {
  nn::Linear fc1, fc2;

  AttentionScorer() = default;
  AttentionScorer(int in, int hidden) : fc1(in, hidden), fc2(hidden, 1) {}

  void init(Rng& rng) {
    fc1.init_uniform(rng);
    fc2.init_uniform(rng);
  }

  /// One score per row of x.
  Vector forward(const Matrix& x) const;

  struct Cache {
    Matrix x;
    Matrix hidden_act;  // tanh output
  };
  Vector forward_cached(const Matrix& x, Cache& cache) const;
  /// Accumulates scorer grads and returns dL/dx for the scored rows.
  Matrix backward(const Cache& cache, const Vector& dscores);
};

/// Softmax-weighted pooling over (optionally top-k-selected) reduced rows.
/// `kept` reports which original rows entered the softmax.
struct PoolResult {
  Vector pooled;
  std::vector<int> kept;
  Vector weights;  // softmax weights aligned with kept
};

PoolResult attention_pool(const Matrix& reduced, const Vector& scores, int top_k);

/// Patch-level pathology encoder: linear 1024->512 reduction, attention
/// scoring, top-k selection, softmax pooling, and a linear survival head.
struct PathologyNet {
  nn::Linear reduce;
  AttentionScorer scorer;
  nn::Linear head;
  int top_k = 64;

  PathologyNet() = default;
  PathologyNet(int in_dim, int pooled_dim, int scorer_hidden, int top_k);

  void init(Rng& rng);
  std::vector<nn::NamedParam> params(const std::string& prefix = "pathology");

  Vector pool(const Matrix& embedding) const;   // V_P, length pooled_dim
  double log_risk(const Matrix& embedding) const;

  struct Cache {
    Matrix embedding;
    Matrix reduced;
    AttentionScorer::Cache scorer;
    PoolResult pool;
  };
  double forward_cached(const Matrix& embedding, Cache& cache) const;
  /// Backward from d(log-risk); accumulates all parameter grads.
  void backward(const Cache& cache, double dlr);
};

/// Slice-level radiology encoder: two linear reductions with GELU between,
/// attention pooling over all rows, and a linear survival head.
struct RadiologyNet {
  nn::Linear reduce1, reduce2;
  AttentionScorer scorer;
  nn::Linear head;

  RadiologyNet() = default;
  RadiologyNet(int in_dim, int hidden_dim, int pooled_dim, int scorer_hidden);

  void init(Rng& rng);
  std::vector<nn::NamedParam> params(const std::string& prefix = "radiology");

  Vector pool(const Matrix& embedding) const;   // V_R, length pooled_dim
  double log_risk(const Matrix& embedding) const;

  struct Cache {
    Matrix embedding;
    Matrix pre_act;   // first reduction output
    Matrix hidden;    // after GELU
    Matrix reduced;
    AttentionScorer::Cache scorer;
    PoolResult pool;
  };
  double forward_cached(const Matrix& embedding, Cache& cache) const;
  void backward(const Cache& cache, double dlr);
};

}  // namespace profuse::encoders
