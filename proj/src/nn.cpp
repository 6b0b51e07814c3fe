#include "profuse/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace profuse::nn {

namespace {

constexpr double kGeluA = 0.044715;
const double kGeluC = std::sqrt(2.0 / M_PI);

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      mask(i, j) = rng.uniform() >= p ? keep_scale : 0.0;
  return mask;
}

void check_mask(const Matrix& x, const TokenMask& mask) {
  if (mask.tokens <= 0) throw std::invalid_argument("token mask has no tokens");
  if (static_cast<Eigen::Index>(mask.keep.size()) != x.rows())
    throw std::invalid_argument("token mask does not match row count");
}

void require_unmasked_tokens(const TokenMask& mask, const char* what) {
  const int T = mask.tokens;
  for (int b = 0; b < mask.subjects(); ++b) {
    bool any = false;
    for (int t = 0; t < T; ++t)
      if (mask.keep[static_cast<std::size_t>(b) * T + t]) {
        any = true;
        break;
      }
    if (!any) throw std::invalid_argument(what);
  }
}

}  // namespace

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void gelu_inplace(Matrix& x) {
  double* data = x.data();
  const Eigen::Index n = x.size();
  for (Eigen::Index i = 0; i < n; ++i) data[i] = gelu(data[i]);
}

void Linear::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
  for (Eigen::Index i = 0; i < weight.value.rows(); ++i)
    for (Eigen::Index j = 0; j < weight.value.cols(); ++j)
      weight.value(i, j) = rng.uniform(-bound, bound);
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.cols())
    throw std::invalid_argument("linear input width mismatch");
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Eigen::Index d = x.cols();
  if (d != gain.value.cols()) throw std::invalid_argument("layer norm width mismatch");
  Matrix normalized(x.rows(), d);
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = (x.row(i).array() - mean) * is;
    inv_std(i) = is;
  }
  Matrix y = normalized.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += bias.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Eigen::Index d = dy.cols();
  gain.grad.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  bias.grad.row(0) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  Matrix dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.normalized.row(i).array()).mean();
    dx.row(i) =
        cache.inv_std(i) *
        (dxhat.row(i).array() - m1 - cache.normalized.row(i).array() * m2).matrix();
  }
  return dx;
}

MultiHeadSelfAttention::MultiHeadSelfAttention(int dim, int n_heads, double drop)
    : wq(dim, dim), wk(dim, dim), wv(dim, dim), wo(dim, dim), heads(n_heads), dropout(drop) {
  if (n_heads <= 0 || dim % n_heads != 0)
    throw std::invalid_argument("head count must divide model dimension");
}

void MultiHeadSelfAttention::init(Rng& rng) {
  wq.init_uniform(rng);
  wk.init_uniform(rng);
  wv.init_uniform(rng);
  wo.init_uniform(rng);
}

namespace {

// Shared attention kernel over per-subject token blocks. `weights_out`, when
// non-null, receives the pre-dropout softmax rows; `drop` (may be empty)
// rescales them before the value product.
Matrix attend_blocks(const Matrix& q, const Matrix& k, const Matrix& v, const TokenMask& mask,
                     int heads, Matrix* weights_out, const Matrix& drop) {
  const int T = mask.tokens;
  const int B = mask.subjects();
  const int d = static_cast<int>(q.cols());
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_dropout = drop.size() > 0;

  Matrix ctx = Matrix::Zero(q.rows(), d);
  if (weights_out) weights_out->setZero(static_cast<Eigen::Index>(B) * heads * T, T);

  Matrix scores(T, T), w(T, T);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(b) * T;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index col0 = static_cast<Eigen::Index>(h) * dh;
      auto qb = q.block(row0, col0, T, dh);
      auto kb = k.block(row0, col0, T, dh);
      auto vb = v.block(row0, col0, T, dh);
      scores.noalias() = qb * kb.transpose();
      scores *= scale;

      // Row-wise softmax restricted to usable keys; masked keys get weight
      // exactly zero and never influence the stabilizing max.
      for (int i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < T; ++j)
          if (mask.keep[row0 + j] && scores(i, j) > mx) mx = scores(i, j);
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
          if (mask.keep[row0 + j]) {
            w(i, j) = std::exp(scores(i, j) - mx);
            sum += w(i, j);
          } else {
            w(i, j) = 0.0;
          }
        }
        if (sum > 0.0) w.row(i) /= sum;
      }

      const Eigen::Index wrow0 = (static_cast<Eigen::Index>(b) * heads + h) * T;
      if (weights_out) weights_out->block(wrow0, 0, T, T) = w;
      if (use_dropout) w.array() *= drop.block(wrow0, 0, T, T).array();
      ctx.block(row0, col0, T, dh).noalias() = w * vb;
    }
  }
  return ctx;
}

}  // namespace

Matrix MultiHeadSelfAttention::attend(const Matrix& q, const Matrix& k, const Matrix& v,
                                      const TokenMask& mask) const {
  require_unmasked_tokens(mask, "attention over empty key set");
  return attend_blocks(q, k, v, mask, heads, nullptr, Matrix());
}

Matrix MultiHeadSelfAttention::forward(const Matrix& x, const TokenMask& mask,
                                       AttentionCache* cache, bool training, Rng* rng) const {
  check_mask(x, mask);
  require_unmasked_tokens(mask, "attention over empty key set");
  Matrix q = wq.forward(x);
  Matrix k = wk.forward(x);
  Matrix v = wv.forward(x);

  const int T = mask.tokens;
  const int B = mask.subjects();
  const bool use_dropout = training && dropout > 0.0 && rng != nullptr;
  Matrix drop;
  if (use_dropout)
    drop = dropout_mask(static_cast<Eigen::Index>(B) * heads * T, T, dropout, *rng);

  Matrix weights;
  Matrix ctx = attend_blocks(q, k, v, mask, heads, cache ? &weights : nullptr, drop);
  Matrix out = wo.forward(ctx);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->drop_mask = use_dropout ? std::move(drop) : Matrix();
    cache->ctx = std::move(ctx);
  }
  return out;
}

Matrix MultiHeadSelfAttention::backward(const AttentionCache& cache, const TokenMask& mask,
                                        const Matrix& dy) {
  const int T = mask.tokens;
  const int B = mask.subjects();
  const int d = static_cast<int>(cache.q.cols());
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool had_dropout = cache.drop_mask.size() > 0;

  Matrix dctx = wo.backward(cache.ctx, dy);
  Matrix dq = Matrix::Zero(cache.q.rows(), d);
  Matrix dk = Matrix::Zero(cache.q.rows(), d);
  Matrix dv = Matrix::Zero(cache.q.rows(), d);

  Matrix w_eff(T, T), dw(T, T), ds(T, T);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(b) * T;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index col0 = static_cast<Eigen::Index>(h) * dh;
      const Eigen::Index wrow0 = (static_cast<Eigen::Index>(b) * heads + h) * T;
      auto w = cache.weights.block(wrow0, 0, T, T);
      if (had_dropout)
        w_eff = w.array() * cache.drop_mask.block(wrow0, 0, T, T).array();
      else
        w_eff = w;

      auto dctx_b = dctx.block(row0, col0, T, dh);
      auto vb = cache.v.block(row0, col0, T, dh);
      dw.noalias() = dctx_b * vb.transpose();
      dv.block(row0, col0, T, dh).noalias() += w_eff.transpose() * dctx_b;
      if (had_dropout) dw.array() *= cache.drop_mask.block(wrow0, 0, T, T).array();

      // Softmax Jacobian row by row; masked columns hold zero weight so their
      // score gradient vanishes automatically.
      for (int i = 0; i < T; ++i) {
        const double dot = dw.row(i).cwiseProduct(w.row(i)).sum();
        ds.row(i) = w.row(i).array() * (dw.row(i).array() - dot);
      }
      auto qb = cache.q.block(row0, col0, T, dh);
      auto kb = cache.k.block(row0, col0, T, dh);
      dq.block(row0, col0, T, dh).noalias() += scale * (ds * kb);
      dk.block(row0, col0, T, dh).noalias() += scale * (ds.transpose() * qb);
    }
  }

  Matrix dx = wq.backward(cache.x, dq);
  dx += wk.backward(cache.x, dk);
  dx += wv.backward(cache.x, dv);
  return dx;
}

EncoderLayer::EncoderLayer(int dim, int n_heads, int ffn_width, double drop)
    : ln1(dim), attn(dim, n_heads, drop), ln2(dim), ffn1(dim, ffn_width),
      ffn2(ffn_width, dim), dropout(drop) {}

void EncoderLayer::init(Rng& rng) {
  attn.init(rng);
  ffn1.init_uniform(rng);
  ffn2.init_uniform(rng);
}

Matrix EncoderLayer::finish_from_r1(const Matrix& r1, EncoderLayerCache* cache, bool training,
                                    Rng* rng) const {
  Matrix ln2_out = ln2.forward(r1, cache ? &cache->ln2 : nullptr);
  Matrix ffn_pre = ffn1.forward(ln2_out);
  Matrix ffn_act = ffn_pre;
  gelu_inplace(ffn_act);
  Matrix ffn_out = ffn2.forward(ffn_act);

  Matrix y;
  if (training && dropout > 0.0 && rng != nullptr) {
    Matrix mask = dropout_mask(ffn_out.rows(), ffn_out.cols(), dropout, *rng);
    y = r1 + (ffn_out.array() * mask.array()).matrix();
    if (cache) cache->ffn_drop_mask = std::move(mask);
  } else {
    y = r1 + ffn_out;
    if (cache) cache->ffn_drop_mask = Matrix();
  }
  if (cache) {
    cache->r1 = r1;
    cache->ln2_out = std::move(ln2_out);
    cache->ffn_pre = std::move(ffn_pre);
    cache->ffn_act = std::move(ffn_act);
    cache->ffn_out = std::move(ffn_out);
  }
  return y;
}

Matrix EncoderLayer::forward(const Matrix& x, const TokenMask& mask, EncoderLayerCache* cache,
                             bool training, Rng* rng) const {
  check_mask(x, mask);
  Matrix ln1_out = ln1.forward(x, cache ? &cache->ln1 : nullptr);
  Matrix attn_out = attn.forward(ln1_out, mask, cache ? &cache->attn : nullptr, training, rng);
  Matrix r1 = x + attn_out;
  if (cache) {
    cache->x_in = x;
    cache->ln1_out = std::move(ln1_out);
  }
  return finish_from_r1(r1, cache, training, rng);
}

Matrix EncoderLayer::backward(const EncoderLayerCache& cache, const TokenMask& mask,
                              const Matrix& dy) {
  Matrix dffn_out = cache.ffn_drop_mask.size() > 0
                        ? (dy.array() * cache.ffn_drop_mask.array()).matrix()
                        : dy;
  Matrix dffn_act = ffn2.backward(cache.ffn_act, dffn_out);
  Matrix dffn_pre(dffn_act.rows(), dffn_act.cols());
  {
    const double* pre = cache.ffn_pre.data();
    const double* da = dffn_act.data();
    double* dp = dffn_pre.data();
    const Eigen::Index n = dffn_pre.size();
    for (Eigen::Index i = 0; i < n; ++i) dp[i] = da[i] * gelu_derivative(pre[i]);
  }
  Matrix dln2_out = ffn1.backward(cache.ln2_out, dffn_pre);
  Matrix dr1 = dy + ln2.backward(cache.ln2, dln2_out);

  Matrix dln1_out = attn.backward(cache.attn, mask, dr1);
  Matrix dx = dr1 + ln1.backward(cache.ln1, dln1_out);
  return dx;
}

TransformerEncoder::TransformerEncoder(int dim, int n_layers, int heads, int ffn_width,
                                       double dropout) {
  if (n_layers <= 0) throw std::invalid_argument("encoder needs at least one layer");
  layers.reserve(n_layers);
  for (int i = 0; i < n_layers; ++i) layers.emplace_back(dim, heads, ffn_width, dropout);
}

void TransformerEncoder::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
}

Matrix TransformerEncoder::forward(const Matrix& x, const TokenMask& mask, EncoderCache* cache,
                                   bool training, Rng* rng) const {
  if (cache) cache->layers.resize(layers.size());
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i)
    h = layers[i].forward(h, mask, cache ? &cache->layers[i] : nullptr, training, rng);
  return h;
}

Matrix TransformerEncoder::backward(const EncoderCache& cache, const TokenMask& mask,
                                    const Matrix& dy) {
  if (cache.layers.size() != layers.size())
    throw std::invalid_argument("encoder cache does not match layer count");
  Matrix d = dy;
  for (std::size_t i = layers.size(); i-- > 0;)
    d = layers[i].backward(cache.layers[i], mask, d);
  return d;
}

Matrix masked_mean_pool(const Matrix& x, const TokenMask& mask) {
  check_mask(x, mask);
  require_unmasked_tokens(mask, "no available modalities");
  const int T = mask.tokens;
  const int B = mask.subjects();
  Matrix pooled = Matrix::Zero(B, x.cols());
  for (int b = 0; b < B; ++b) {
    int count = 0;
    for (int t = 0; t < T; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
      if (mask.keep[r]) {
        pooled.row(b) += x.row(r);
        ++count;
      }
    }
    pooled.row(b) /= static_cast<double>(count);
  }
  return pooled;
}

Matrix masked_mean_pool_backward(const Matrix& dpooled, const TokenMask& mask) {
  const int T = mask.tokens;
  const int B = mask.subjects();
  if (dpooled.rows() != B) throw std::invalid_argument("pooled gradient row mismatch");
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(B) * T, dpooled.cols());
  for (int b = 0; b < B; ++b) {
    int count = 0;
    for (int t = 0; t < T; ++t)
      if (mask.keep[static_cast<Eigen::Index>(b) * T + t]) ++count;
    if (count == 0) continue;
    const double inv = 1.0 / static_cast<double>(count);
    for (int t = 0; t < T; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
      if (mask.keep[r]) dx.row(r) = dpooled.row(b) * inv;
    }
  }
  return dx;
}

Matrix self_attention_single(const MultiHeadSelfAttention& attn, const Matrix& x,
                             const std::vector<std::uint8_t>& key_mask) {
  TokenMask mask{static_cast<int>(x.rows()), key_mask};
  return attn.forward(x, mask, nullptr, false, nullptr);
}

Matrix transformer_encode_single(const TransformerEncoder& enc, const Matrix& x,
                                 const std::vector<std::uint8_t>& key_mask) {
  TokenMask mask{static_cast<int>(x.rows()), key_mask};
  return enc.forward(x, mask, nullptr, false, nullptr);
}

Vector masked_mean_pool_single(const Matrix& x, const std::vector<std::uint8_t>& mask) {
  TokenMask tm{static_cast<int>(x.rows()), mask};
  Matrix pooled = masked_mean_pool(x, tm);
  return pooled.row(0).transpose();
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<NamedParam>& params,
                           const GradCheckConfig& config) {
  Rng rng(config.seed == 0 ? 0x6772616463686b ^ 0x9e3779b97f4a7c15ull : config.seed);
  GradCheckReport report;
  for (const auto& named : params) {
    Parameter& p = *named.param;
    const Eigen::Index n = p.value.size();
    std::vector<Eigen::Index> coords;
    if (n <= config.sample_per_tensor) {
      coords.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::unordered_set<Eigen::Index> seen;
      while (static_cast<int>(coords.size()) < config.sample_per_tensor) {
        const auto idx = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(n)));
        if (seen.insert(idx).second) coords.push_back(idx);
      }
    }

    double tensor_max = 0.0;
    double* data = p.value.data();
    const double* grad = p.grad.data();
    for (const Eigen::Index idx : coords) {
      const double original = data[idx];
      data[idx] = original + config.step;
      const double up = loss();
      data[idx] = original - config.step;
      const double down = loss();
      data[idx] = original;
      const double fd = (up - down) / (2.0 * config.step);
      const double denom = std::max({std::abs(fd), std::abs(grad[idx]), config.denom_floor});
      const double rel = std::abs(fd - grad[idx]) / denom;
      tensor_max = std::max(tensor_max, rel);
    }
    report.per_tensor.push_back({named.name, tensor_max, static_cast<int>(coords.size())});
    report.coords_checked += static_cast<int>(coords.size());
    report.max_rel_error = std::max(report.max_rel_error, tensor_max);
  }
  report.passed = report.max_rel_error <= config.tolerance;
  return report;
}

}  // namespace profuse::nn
