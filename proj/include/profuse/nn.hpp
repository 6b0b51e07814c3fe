#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "profuse/rng.hpp"
#include "profuse/types.hpp"

namespace profuse::nn {

/// Tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
double gelu(double x);
double gelu_derivative(double x);
void gelu_inplace(Matrix& x);

/// Value plus gradient accumulator of identical shape.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(Eigen::Index rows, Eigen::Index cols)
      : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

struct NamedParam {
  std::string name;
  Parameter* param;
};

/// y = x W^T + b, W stored out-by-in.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(int in, int out) : weight(out, in), bias(1, out) {}

  /// U(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
  void init_uniform(Rng& rng);

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  Matrix forward(const Matrix& x) const;
  /// Accumulates weight/bias grads and returns dL/dx. x is the forward input.
  Matrix backward(const Matrix& x, const Matrix& dy);
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim) : gain(1, dim), bias(1, dim) {
    gain.value.setOnes();  // identity at initialization
  }

  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
};

/// Per-token boolean usability mask for a batch of token stacks. Rows of the
/// stacked matrix are grouped per subject: subject b owns rows
/// [b*tokens, (b+1)*tokens).
struct TokenMask {
  int tokens = 0;
  std::vector<std::uint8_t> keep;  // size = subjects * tokens

  int subjects() const { return tokens == 0 ? 0 : static_cast<int>(keep.size()) / tokens; }
};

struct AttentionCache {
  Matrix x;           // layer-norm output fed to the projections
  Matrix q, k, v;     // (B*T) x d
  Matrix weights;     // (B*H*T) x T softmax rows (post-dropout when training)
  Matrix drop_mask;   // empty unless dropout was applied
  Matrix ctx;         // concatenated head outputs, (B*T) x d
};

/// Scaled dot-product self-attention over per-subject token blocks. Masked
/// positions are excluded as keys; query rows are always computed.
struct MultiHeadSelfAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  double dropout = 0.0;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(int dim, int heads, double dropout);

  void init(Rng& rng);

  Matrix forward(const Matrix& x, const TokenMask& mask, AttentionCache* cache,
                 bool training, Rng* rng) const;
  Matrix backward(const AttentionCache& cache, const TokenMask& mask, const Matrix& dy);

  /// Deterministic context rows from already-projected q/k/v; used for
  /// inference paths that start mid-layer.
  Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v,
                const TokenMask& mask) const;
};

struct EncoderLayerCache {
  Matrix x_in;
  LayerNorm::Cache ln1;
  AttentionCache attn;
  Matrix ln1_out;
  Matrix r1;  // x + attention branch
  LayerNorm::Cache ln2;
  Matrix ln2_out;
  Matrix ffn_pre;   // first linear output
  Matrix ffn_act;   // after GELU
  Matrix ffn_out;   // second linear output
  Matrix ffn_drop_mask;
};

/// Pre-norm encoder layer: x + Attn(LN(x)), then + FFN(LN(.)).
struct EncoderLayer {
  LayerNorm ln1;
  MultiHeadSelfAttention attn;
  LayerNorm ln2;
  Linear ffn1, ffn2;
  double dropout = 0.0;

  EncoderLayer() = default;
  EncoderLayer(int dim, int heads, int ffn_width, double dropout);

  void init(Rng& rng);

  Matrix forward(const Matrix& x, const TokenMask& mask, EncoderLayerCache* cache,
                 bool training, Rng* rng) const;
  Matrix backward(const EncoderLayerCache& cache, const TokenMask& mask, const Matrix& dy);

  /// Remainder of the layer once the post-attention residual sum is known.
  Matrix finish_from_r1(const Matrix& r1, EncoderLayerCache* cache, bool training,
                        Rng* rng) const;
};

struct EncoderCache {
  std::vector<EncoderLayerCache> layers;
};

struct TransformerEncoder {
  std::vector<EncoderLayer> layers;

  TransformerEncoder() = default;
  TransformerEncoder(int dim, int n_layers, int heads, int ffn_width, double dropout);

  void init(Rng& rng);

  Matrix forward(const Matrix& x, const TokenMask& mask, EncoderCache* cache,
                 bool training, Rng* rng) const;
  Matrix backward(const EncoderCache& cache, const TokenMask& mask, const Matrix& dy);
};

/// Mean over unmasked rows of each subject block; masked rows contribute
/// nothing. Output is subjects x d.
Matrix masked_mean_pool(const Matrix& x, const TokenMask& mask);
/// Scatter of pooled gradients back onto unmasked rows.
Matrix masked_mean_pool_backward(const Matrix& dpooled, const TokenMask& mask);

// Single-stack (one subject) conveniences.
Matrix self_attention_single(const MultiHeadSelfAttention& attn, const Matrix& x,
                             const std::vector<std::uint8_t>& key_mask);
Matrix transformer_encode_single(const TransformerEncoder& enc, const Matrix& x,
                                 const std::vector<std::uint8_t>& key_mask);
Vector masked_mean_pool_single(const Matrix& x, const std::vector<std::uint8_t>& mask);

struct GradCheckConfig {
  double step = 1e-5;
  double tolerance = 1e-4;
  int sample_per_tensor = 64;     // all coordinates when the tensor is smaller
  double denom_floor = 1e-3;      // guards the relative error for near-zero grads
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error;
  int coords;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  bool passed = false;
  std::vector<GradCheckEntry> per_tensor;
};

/// Central finite differences against already-accumulated analytic grads.
/// `loss` must be a deterministic function of the parameter values; it is
/// re-evaluated with single coordinates perturbed in place.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<NamedParam>& params,
                           const GradCheckConfig& config);

}  // namespace profuse::nn
