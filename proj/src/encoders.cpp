#include "profuse/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace profuse::encoders {

namespace {

double parse_numeric(const std::string& text, const std::string& attribute) {
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &consumed);
  } catch (const std::exception&) {
    throw std::runtime_error("invalid numeric value '" + text + "' for " + attribute);
  }
  if (consumed != text.size() || !std::isfinite(value))
    throw std::runtime_error("invalid numeric value '" + text + "' for " + attribute);
  return value;
}

}  // namespace

int ClinicalSchema::one_hot_width() const {
  int w = 0;
  for (const auto& a : attributes) w += a.one_hot_width();
  return w;
}

int ClinicalSchema::dummy_width() const {
  int w = 0;
  for (const auto& a : attributes) w += a.dummy_width();
  return w;
}

int ClinicalSchema::category_index(int attribute, const std::string& value) const {
  const auto& cats = attributes[attribute].categories;
  for (std::size_t i = 0; i < cats.size(); ++i)
    if (cats[i] == value) return static_cast<int>(i);
  throw std::runtime_error("category not in schema");
}

ClinicalSchema ClinicalSchema::default_schema() {
  ClinicalSchema s;
  s.attributes.push_back({"age_at_rp", true, {}});
  s.attributes.push_back({"isup_grade", false, {"1", "2", "3", "4", "5"}});
  s.attributes.push_back({"pt_stage", false,
                          {"pT2", "pT2a", "pT2b", "pT2c", "pT3", "pT3a", "pT3b", "pT4", "pTx"}});
  for (const char* name : {"lymph_nodes", "capsular_penetration", "surgical_margins", "svi",
                           "lvi"})
    s.attributes.push_back({name, false, {"no", "yes"}});
  return s;
}

ClinicalStats compute_clinical_stats(const std::vector<ClinicalRecord>& records,
                                     const ClinicalSchema& schema) {
  const std::size_t n_attr = schema.attributes.size();
  ClinicalStats stats;
  stats.mean.assign(n_attr, 0.0);
  stats.stdev.assign(n_attr, 0.0);
  stats.mode_index.assign(n_attr, -1);

  for (std::size_t a = 0; a < n_attr; ++a) {
    const auto& spec = schema.attributes[a];
    if (spec.numeric) {
      std::vector<double> values;
      for (const auto& r : records) {
        if (r.values.size() != n_attr)
          throw std::runtime_error("clinical record width does not match schema");
        if (r.values[a]) values.push_back(parse_numeric(*r.values[a], spec.name));
      }
      if (!values.empty()) {
        const double mean =
            std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        stats.mean[a] = mean;
        stats.stdev[a] = std::sqrt(var);
      }
    } else {
      std::vector<int> counts(spec.categories.size(), 0);
      for (const auto& r : records) {
        if (r.values.size() != n_attr)
          throw std::runtime_error("clinical record width does not match schema");
        if (r.values[a]) ++counts[schema.category_index(static_cast<int>(a), *r.values[a])];
      }
      int best = -1, best_count = 0;
      for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > best_count) {
          best = static_cast<int>(c);
          best_count = counts[c];
        }
      stats.mode_index[a] = best;
    }
  }
  return stats;
}

namespace {

// Shared attribute-resolution walk for both encodings. `emit` receives either
// the z-scored numeric value or the resolved category index per attribute.
template <typename EmitNumeric, typename EmitCategory>
void resolve_attributes(const ClinicalRecord& record, const ClinicalSchema& schema,
                        const ClinicalStats& stats, EmitNumeric&& emit_numeric,
                        EmitCategory&& emit_category) {
  const std::size_t n_attr = schema.attributes.size();
  if (record.values.size() != n_attr)
    throw std::runtime_error("clinical record width does not match schema");
  for (std::size_t a = 0; a < n_attr; ++a) {
    const auto& spec = schema.attributes[a];
    if (spec.numeric) {
      if (stats.stdev[a] <= 0.0) throw std::runtime_error("degenerate numeric attribute");
      const double raw =
          record.values[a] ? parse_numeric(*record.values[a], spec.name) : stats.mean[a];
      emit_numeric(a, (raw - stats.mean[a]) / stats.stdev[a]);
    } else {
      int idx;
      if (record.values[a]) {
        idx = schema.category_index(static_cast<int>(a), *record.values[a]);
      } else {
        idx = stats.mode_index[a];
        if (idx < 0)
          throw std::runtime_error("no observed categories for attribute " + spec.name);
      }
      emit_category(a, idx);
    }
  }
}

}  // namespace

Vector encode_clinical_vector(const ClinicalRecord& record, const ClinicalSchema& schema,
                              const ClinicalStats& stats) {
  Vector out = Vector::Zero(schema.one_hot_width());
  int offset = 0;
  resolve_attributes(
      record, schema, stats,
      [&](std::size_t, double z) { out(offset++) = z; },
      [&](std::size_t a, int idx) {
        out(offset + idx) = 1.0;
        offset += schema.attributes[a].one_hot_width();
      });
  return out;
}

Vector encode_clinical_dummy(const ClinicalRecord& record, const ClinicalSchema& schema,
                             const ClinicalStats& stats) {
  Vector out = Vector::Zero(schema.dummy_width());
  int offset = 0;
  resolve_attributes(
      record, schema, stats,
      [&](std::size_t, double z) { out(offset++) = z; },
      [&](std::size_t a, int idx) {
        if (idx > 0) out(offset + idx - 1) = 1.0;  // first category is the reference
        offset += schema.attributes[a].dummy_width();
      });
  return out;
}

Matrix encode_clinical_matrix(const std::vector<ClinicalRecord>& records,
                              const ClinicalSchema& schema, const ClinicalStats& stats,
                              bool dummy) {
  const int width = dummy ? schema.dummy_width() : schema.one_hot_width();
  Matrix out(static_cast<Eigen::Index>(records.size()), width);
  for (std::size_t i = 0; i < records.size(); ++i) {
    Vector row = dummy ? encode_clinical_dummy(records[i], schema, stats)
                       : encode_clinical_vector(records[i], schema, stats);
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

Vector AttentionScorer::forward(const Matrix& x) const {
  Matrix h = fc1.forward(x);
  h = h.array().tanh();
  return fc2.forward(h).col(0);
}

Vector AttentionScorer::forward_cached(const Matrix& x, Cache& cache) const {
  cache.x = x;
  Matrix h = fc1.forward(x);
  cache.hidden_act = h.array().tanh();
  return fc2.forward(cache.hidden_act).col(0);
}

Matrix AttentionScorer::backward(const Cache& cache, const Vector& dscores) {
  Matrix dout = dscores;  // M x 1
  Matrix dhidden = fc2.backward(cache.hidden_act, dout);
  Matrix dpre =
      (dhidden.array() * (1.0 - cache.hidden_act.array().square())).matrix();
  return fc1.backward(cache.x, dpre);
}

PoolResult attention_pool(const Matrix& reduced, const Vector& scores, int top_k) {
  const int m = static_cast<int>(reduced.rows());
  if (m < 1) throw std::invalid_argument("pooling needs at least one row");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  // Stable sort keeps original-index order among tied scores.
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  const int keep = (top_k > 0 && top_k < m) ? top_k : m;

  PoolResult result;
  result.kept.assign(order.begin(), order.begin() + keep);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i : result.kept) mx = std::max(mx, scores(i));
  result.weights = Vector(keep);
  double sum = 0.0;
  for (int j = 0; j < keep; ++j) {
    result.weights(j) = std::exp(scores(result.kept[j]) - mx);
    sum += result.weights(j);
  }
  result.weights /= sum;
  result.pooled = Vector::Zero(reduced.cols());
  for (int j = 0; j < keep; ++j)
    result.pooled += result.weights(j) * reduced.row(result.kept[j]).transpose();
  return result;
}

namespace {

void require_finite(const Matrix& embedding) {
  if (!embedding.allFinite()) throw std::invalid_argument("non-finite input");
  if (embedding.rows() < 1) throw std::invalid_argument("embedding needs at least one row");
}

// Pool-then-head backward shared by both nets. Returns dL/d(reduced rows) and
// accumulates head and scorer grads.
Matrix pooled_head_backward(nn::Linear& head, AttentionScorer& scorer,
                            const AttentionScorer::Cache& scorer_cache, const PoolResult& pool,
                            const Matrix& reduced, double dlr) {
  Matrix pooled_row = pool.pooled.transpose();
  Matrix dout(1, 1);
  dout(0, 0) = dlr;
  Matrix dpooled = head.backward(pooled_row, dout);  // 1 x pooled_dim

  const int keep = static_cast<int>(pool.kept.size());
  Vector dweights(keep);
  Matrix dreduced = Matrix::Zero(reduced.rows(), reduced.cols());
  for (int j = 0; j < keep; ++j) {
    const int row = pool.kept[j];
    dweights(j) = dpooled.row(0).dot(reduced.row(row));
    dreduced.row(row) += pool.weights(j) * dpooled.row(0);
  }
  // Softmax backward over the kept scores only; unselected rows sit strictly
  // below the cutoff, where the top-k selection is locally constant.
  const double dot = dweights.dot(pool.weights);
  Vector dscores = Vector::Zero(reduced.rows());
  for (int j = 0; j < keep; ++j)
    dscores(pool.kept[j]) = pool.weights(j) * (dweights(j) - dot);
  dreduced += scorer.backward(scorer_cache, dscores);
  return dreduced;
}

}  // namespace

PathologyNet::PathologyNet(int in_dim, int pooled_dim, int scorer_hidden, int k)
    : reduce(in_dim, pooled_dim), scorer(pooled_dim, scorer_hidden), head(pooled_dim, 1),
      top_k(k) {}

void PathologyNet::init(Rng& rng) {
  reduce.init_uniform(rng);
  scorer.init(rng);
  head.weight.value.setZero();  // zero head: initial log-risk is 0
  head.bias.value.setZero();
}

std::vector<nn::NamedParam> PathologyNet::params(const std::string& prefix) {
  return {{prefix + ".reduce.weight", &reduce.weight},
          {prefix + ".reduce.bias", &reduce.bias},
          {prefix + ".scorer.fc1.weight", &scorer.fc1.weight},
          {prefix + ".scorer.fc1.bias", &scorer.fc1.bias},
          {prefix + ".scorer.fc2.weight", &scorer.fc2.weight},
          {prefix + ".scorer.fc2.bias", &scorer.fc2.bias},
          {prefix + ".head.weight", &head.weight},
          {prefix + ".head.bias", &head.bias}};
}

Vector PathologyNet::pool(const Matrix& embedding) const {
  require_finite(embedding);
  Matrix reduced = reduce.forward(embedding);
  Vector scores = scorer.forward(reduced);
  return attention_pool(reduced, scores, top_k).pooled;
}

double PathologyNet::log_risk(const Matrix& embedding) const {
  Matrix pooled_row = pool(embedding).transpose();
  return head.forward(pooled_row)(0, 0);
}

double PathologyNet::forward_cached(const Matrix& embedding, Cache& cache) const {
  require_finite(embedding);
  cache.embedding = embedding;
  cache.reduced = reduce.forward(embedding);
  Vector scores = scorer.forward_cached(cache.reduced, cache.scorer);
  cache.pool = attention_pool(cache.reduced, scores, top_k);
  return head.forward(cache.pool.pooled.transpose())(0, 0);
}

void PathologyNet::backward(const Cache& cache, double dlr) {
  Matrix dreduced =
      pooled_head_backward(head, scorer, cache.scorer, cache.pool, cache.reduced, dlr);
  reduce.backward(cache.embedding, dreduced);
}

RadiologyNet::RadiologyNet(int in_dim, int hidden_dim, int pooled_dim, int scorer_hidden)
    : reduce1(in_dim, hidden_dim), reduce2(hidden_dim, pooled_dim),
      scorer(pooled_dim, scorer_hidden), head(pooled_dim, 1) {}

void RadiologyNet::init(Rng& rng) {
  reduce1.init_uniform(rng);
  reduce2.init_uniform(rng);
  scorer.init(rng);
  head.weight.value.setZero();
  head.bias.value.setZero();
}

std::vector<nn::NamedParam> RadiologyNet::params(const std::string& prefix) {
  return {{prefix + ".reduce1.weight", &reduce1.weight},
          {prefix + ".reduce1.bias", &reduce1.bias},
          {prefix + ".reduce2.weight", &reduce2.weight},
          {prefix + ".reduce2.bias", &reduce2.bias},
          {prefix + ".scorer.fc1.weight", &scorer.fc1.weight},
          {prefix + ".scorer.fc1.bias", &scorer.fc1.bias},
          {prefix + ".scorer.fc2.weight", &scorer.fc2.weight},
          {prefix + ".scorer.fc2.bias", &scorer.fc2.bias},
          {prefix + ".head.weight", &head.weight},
          {prefix + ".head.bias", &head.bias}};
}

Vector RadiologyNet::pool(const Matrix& embedding) const {
  require_finite(embedding);
  Matrix pre = reduce1.forward(embedding);
  Matrix hidden = pre;
  nn::gelu_inplace(hidden);
  Matrix reduced = reduce2.forward(hidden);
  Vector scores = scorer.forward(reduced);
  return attention_pool(reduced, scores, 0).pooled;
}

double RadiologyNet::log_risk(const Matrix& embedding) const {
  Matrix pooled_row = pool(embedding).transpose();
  return head.forward(pooled_row)(0, 0);
}

double RadiologyNet::forward_cached(const Matrix& embedding, Cache& cache) const {
  require_finite(embedding);
  cache.embedding = embedding;
  cache.pre_act = reduce1.forward(embedding);
  cache.hidden = cache.pre_act;
  nn::gelu_inplace(cache.hidden);
  cache.reduced = reduce2.forward(cache.hidden);
  Vector scores = scorer.forward_cached(cache.reduced, cache.scorer);
  cache.pool = attention_pool(cache.reduced, scores, 0);
  return head.forward(cache.pool.pooled.transpose())(0, 0);
}

void RadiologyNet::backward(const Cache& cache, double dlr) {
  Matrix dreduced =
      pooled_head_backward(head, scorer, cache.scorer, cache.pool, cache.reduced, dlr);
  Matrix dhidden = reduce2.backward(cache.hidden, dreduced);
  Matrix dpre(dhidden.rows(), dhidden.cols());
  {
    const double* pre = cache.pre_act.data();
    const double* dh = dhidden.data();
    double* dp = dpre.data();
    for (Eigen::Index i = 0; i < dpre.size(); ++i) dp[i] = dh[i] * nn::gelu_derivative(pre[i]);
  }
  reduce1.backward(cache.embedding, dpre);
}

}  // namespace profuse::encoders
