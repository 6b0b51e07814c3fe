#include "profuse/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace profuse::fusion {

AggMode agg_mode_from_string(const std::string& name) {
  if (name == "median") return AggMode::median;
  if (name == "mean") return AggMode::mean;
  throw std::runtime_error("unknown aggregation mode: " + name);
}

std::string to_string(AggMode mode) { return mode == AggMode::median ? "median" : "mean"; }

Combination combination_from_string(const std::string& name) {
  if (name == "C") return Combination::C;
  if (name == "P") return Combination::P;
  if (name == "R") return Combination::R;
  if (name == "C+P") return Combination::CP;
  if (name == "C+P+R_avg") return Combination::CPR_avg;
  if (name == "C+P+R_med") return Combination::CPR_med;
  throw std::runtime_error("unknown modality combination: " + name);
}

std::string to_string(Combination combo) {
  switch (combo) {
    case Combination::C: return "C";
    case Combination::P: return "P";
    case Combination::R: return "R";
    case Combination::CP: return "C+P";
    case Combination::CPR_avg: return "C+P+R_avg";
    case Combination::CPR_med: return "C+P+R_med";
  }
  throw std::logic_error("unreachable");
}

std::vector<Combination> all_combinations() {
  return {Combination::C,  Combination::P,       Combination::R,
          Combination::CP, Combination::CPR_avg, Combination::CPR_med};
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean of empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

IntermediateFusionModel::IntermediateFusionModel(const FusionConfig& config)
    : cfg(config),
      tok_clinical(config.clinical_width, config.latent_dim),
      tok_pathology(config.pooled_dim, config.latent_dim),
      tok_radiology(config.pooled_dim, config.latent_dim),
      positions(3, config.latent_dim),
      encoder(config.latent_dim, config.layers, config.heads, config.ffn_width, config.dropout),
      head(config.latent_dim, 1) {}

void IntermediateFusionModel::init(Rng& rng) {
  tok_clinical.init_uniform(rng);
  tok_pathology.init_uniform(rng);
  tok_radiology.init_uniform(rng);
  positions.value.setZero();
  encoder.init(rng);
  head.weight.value.setZero();  // zero head: initial log-risk is 0
  head.bias.value.setZero();
}

std::vector<nn::NamedParam> IntermediateFusionModel::params(const std::string& prefix) {
  std::vector<nn::NamedParam> out = {
      {prefix + ".tokenizer_clinical.weight", &tok_clinical.weight},
      {prefix + ".tokenizer_clinical.bias", &tok_clinical.bias},
      {prefix + ".tokenizer_pathology.weight", &tok_pathology.weight},
      {prefix + ".tokenizer_pathology.bias", &tok_pathology.bias},
      {prefix + ".tokenizer_radiology.weight", &tok_radiology.weight},
      {prefix + ".tokenizer_radiology.bias", &tok_radiology.bias},
      {prefix + ".positions", &positions},
  };
  for (std::size_t i = 0; i < encoder.layers.size(); ++i) {
    auto& layer = encoder.layers[i];
    const std::string lp = prefix + ".encoder.layer" + std::to_string(i);
    out.push_back({lp + ".ln1.gain", &layer.ln1.gain});
    out.push_back({lp + ".ln1.bias", &layer.ln1.bias});
    out.push_back({lp + ".attn.wq.weight", &layer.attn.wq.weight});
    out.push_back({lp + ".attn.wq.bias", &layer.attn.wq.bias});
    out.push_back({lp + ".attn.wk.weight", &layer.attn.wk.weight});
    out.push_back({lp + ".attn.wk.bias", &layer.attn.wk.bias});
    out.push_back({lp + ".attn.wv.weight", &layer.attn.wv.weight});
    out.push_back({lp + ".attn.wv.bias", &layer.attn.wv.bias});
    out.push_back({lp + ".attn.wo.weight", &layer.attn.wo.weight});
    out.push_back({lp + ".attn.wo.bias", &layer.attn.wo.bias});
    out.push_back({lp + ".ln2.gain", &layer.ln2.gain});
    out.push_back({lp + ".ln2.bias", &layer.ln2.bias});
    out.push_back({lp + ".ffn1.weight", &layer.ffn1.weight});
    out.push_back({lp + ".ffn1.bias", &layer.ffn1.bias});
    out.push_back({lp + ".ffn2.weight", &layer.ffn2.weight});
    out.push_back({lp + ".ffn2.bias", &layer.ffn2.bias});
  }
  out.push_back({prefix + ".head.weight", &head.weight});
  out.push_back({prefix + ".head.bias", &head.bias});
  return out;
}

namespace {

// Zero out rows whose modality is absent so downstream products never touch
// caller values (including NaNs) for masked slots.
Matrix sanitized(const Matrix& x, const std::vector<ModalityMask>& masks,
                 bool ModalityMask::* slot, int width) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(masks.size()), width);
  if (x.rows() != out.rows() && x.rows() != 0)
    throw std::invalid_argument("modality matrix row count does not match mask count");
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (!(masks[b].*slot)) continue;
    if (x.rows() == 0) throw std::invalid_argument("modality marked present but no data given");
    if (x.cols() != width) throw std::invalid_argument("modality vector width mismatch");
    if (!x.row(static_cast<Eigen::Index>(b)).allFinite())
      throw std::invalid_argument("non-finite input");
    out.row(static_cast<Eigen::Index>(b)) = x.row(static_cast<Eigen::Index>(b));
  }
  return out;
}

}  // namespace

Vector IntermediateFusionModel::forward(const Matrix& vc, const Matrix& vp, const Matrix& vr,
                                        const std::vector<ModalityMask>& masks, Cache* cache,
                                        bool training, Rng* rng) const {
  const int n = static_cast<int>(masks.size());
  if (n == 0) throw std::invalid_argument("empty batch");
  for (const auto& m : masks)
    if (!m.any()) throw std::invalid_argument("no available modalities");

  Matrix vc_clean = sanitized(vc, masks, &ModalityMask::clinical, cfg.clinical_width);
  Matrix vp_clean = sanitized(vp, masks, &ModalityMask::pathology, cfg.pooled_dim);
  Matrix vr_clean = sanitized(vr, masks, &ModalityMask::radiology, cfg.pooled_dim);

  Matrix tc = tok_clinical.forward(vc_clean);
  Matrix tp = tok_pathology.forward(vp_clean);
  Matrix tr = tok_radiology.forward(vr_clean);

  nn::TokenMask token_mask;
  token_mask.tokens = 3;
  token_mask.keep.assign(static_cast<std::size_t>(n) * 3, 0);
  Matrix stacked = Matrix::Zero(static_cast<Eigen::Index>(n) * 3, cfg.latent_dim);
  for (int b = 0; b < n; ++b) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(b) * 3;
    if (masks[b].clinical) {
      stacked.row(row0 + 0) = tc.row(b) + positions.value.row(0);
      token_mask.keep[row0 + 0] = 1;
    }
    if (masks[b].pathology) {
      stacked.row(row0 + 1) = tp.row(b) + positions.value.row(1);
      token_mask.keep[row0 + 1] = 1;
    }
    if (masks[b].radiology) {
      stacked.row(row0 + 2) = tr.row(b) + positions.value.row(2);
      token_mask.keep[row0 + 2] = 1;
    }
  }

  Matrix encoded =
      encoder.forward(stacked, token_mask, cache ? &cache->encoder_cache : nullptr, training, rng);
  Matrix pooled = nn::masked_mean_pool(encoded, token_mask);
  Vector lr = head.forward(pooled).col(0);

  if (cache) {
    cache->vc = std::move(vc_clean);
    cache->vp = std::move(vp_clean);
    cache->vr = std::move(vr_clean);
    cache->masks = masks;
    cache->token_mask = std::move(token_mask);
    cache->stacked = std::move(stacked);
    cache->encoded = std::move(encoded);
    cache->pooled = std::move(pooled);
  }
  return lr;
}

void IntermediateFusionModel::backward(const Cache& cache, const Vector& dlr) {
  const int n = static_cast<int>(cache.masks.size());
  Matrix dpooled = head.backward(cache.pooled, dlr);
  Matrix dencoded = nn::masked_mean_pool_backward(dpooled, cache.token_mask);
  Matrix dstacked = encoder.backward(cache.encoder_cache, cache.token_mask, dencoded);

  Matrix dtc = Matrix::Zero(n, cfg.latent_dim);
  Matrix dtp = Matrix::Zero(n, cfg.latent_dim);
  Matrix dtr = Matrix::Zero(n, cfg.latent_dim);
  for (int b = 0; b < n; ++b) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(b) * 3;
    if (cache.masks[b].clinical) {
      dtc.row(b) = dstacked.row(row0 + 0);
      positions.grad.row(0) += dstacked.row(row0 + 0);
    }
    if (cache.masks[b].pathology) {
      dtp.row(b) = dstacked.row(row0 + 1);
      positions.grad.row(1) += dstacked.row(row0 + 1);
    }
    if (cache.masks[b].radiology) {
      dtr.row(b) = dstacked.row(row0 + 2);
      positions.grad.row(2) += dstacked.row(row0 + 2);
    }
  }
  tok_clinical.backward(cache.vc, dtc);
  tok_pathology.backward(cache.vp, dtp);
  tok_radiology.backward(cache.vr, dtr);
}

std::pair<Matrix, nn::TokenMask> IntermediateFusionModel::tokenize_and_stack(
    const Vector& vc, const Vector& vp, const Vector& vr, const ModalityMask& mask) const {
  if (!mask.any()) throw std::invalid_argument("no available modalities");
  Matrix stacked = Matrix::Zero(3, cfg.latent_dim);
  nn::TokenMask token_mask;
  token_mask.tokens = 3;
  token_mask.keep = {static_cast<std::uint8_t>(mask.clinical),
                     static_cast<std::uint8_t>(mask.pathology),
                     static_cast<std::uint8_t>(mask.radiology)};
  if (mask.clinical)
    stacked.row(0) =
        tok_clinical.forward(vc.transpose()).row(0) + positions.value.row(0);
  if (mask.pathology)
    stacked.row(1) =
        tok_pathology.forward(vp.transpose()).row(0) + positions.value.row(1);
  if (mask.radiology)
    stacked.row(2) =
        tok_radiology.forward(vr.transpose()).row(0) + positions.value.row(2);
  return {std::move(stacked), std::move(token_mask)};
}

double IntermediateFusionModel::forward_log_risk(const Vector& vc, const Vector& vp,
                                                 const Vector& vr,
                                                 const ModalityMask& mask) const {
  Matrix mc = mask.clinical ? Matrix(vc.transpose()) : Matrix::Zero(1, cfg.clinical_width);
  Matrix mp = mask.pathology ? Matrix(vp.transpose()) : Matrix::Zero(1, cfg.pooled_dim);
  Matrix mr = mask.radiology ? Matrix(vr.transpose()) : Matrix::Zero(1, cfg.pooled_dim);
  Vector lr = forward(mc, mp, mr, {mask}, nullptr, false, nullptr);
  return lr(0);
}

double ensemble_intermediate(const std::vector<double>& fold_log_risks) {
  if (fold_log_risks.empty()) throw std::invalid_argument("no fold scores to ensemble");
  return mean(fold_log_risks);
}

std::vector<Matrix> aggregate_model_weights(const std::vector<std::vector<Matrix>>& models,
                                            AggMode mode) {
  if (models.empty()) throw std::invalid_argument("no models to aggregate");
  const std::size_t n_tensors = models.front().size();
  for (const auto& m : models) {
    if (m.size() != n_tensors) throw std::invalid_argument("model tensor count mismatch");
    for (std::size_t t = 0; t < n_tensors; ++t)
      if (m[t].rows() != models.front()[t].rows() || m[t].cols() != models.front()[t].cols())
        throw std::invalid_argument("model tensor shape mismatch");
  }

  std::vector<Matrix> out(n_tensors);
  std::vector<double> column(models.size());
  for (std::size_t t = 0; t < n_tensors; ++t) {
    out[t].resize(models.front()[t].rows(), models.front()[t].cols());
    const Eigen::Index size = out[t].size();
    for (Eigen::Index i = 0; i < size; ++i) {
      for (std::size_t m = 0; m < models.size(); ++m) column[m] = models[m][t].data()[i];
      out[t].data()[i] = mode == AggMode::median ? median(column) : mean(column);
    }
  }
  return out;
}

double late_fuse(const std::vector<double>& modality_log_risks, AggMode mode) {
  if (modality_log_risks.empty()) throw std::invalid_argument("no modality scores to fuse");
  return mode == AggMode::median ? median(modality_log_risks) : mean(modality_log_risks);
}

}  // namespace profuse::fusion
