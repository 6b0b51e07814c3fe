#include "profuse/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "profuse/checkpoint.hpp"
#include "profuse/survival.hpp"

namespace fs = std::filesystem;

namespace profuse::pipeline {
namespace {

using nlohmann::ordered_json;

constexpr std::array<fusion::AggMode, 2> kAggModes{fusion::AggMode::median,
                                                   fusion::AggMode::mean};

int agg_index(fusion::AggMode mode) { return mode == fusion::AggMode::median ? 0 : 1; }

fusion::FusionConfig make_fusion_config(const runconfig::RunConfig& c,
                                        const encoders::ClinicalSchema& schema) {
  fusion::FusionConfig fc;
  fc.clinical_width = schema.one_hot_width();
  fc.pooled_dim = c.model.pooled_dim;
  fc.latent_dim = c.model.latent_dim;
  fc.layers = c.model.layers;
  fc.heads = c.model.heads;
  fc.ffn_width = c.model.ffn_width;
  fc.dropout = c.model.dropout;
  return fc;
}

/// Full-batch adapter over one pooling encoder and its embedding list.
template <typename Net>
class EncoderBatch final : public experiment::CoxBatchModel {
 public:
  EncoderBatch(Net& net, const std::vector<Matrix>& embeddings)
      : net_(net), embeddings_(embeddings) {}

  std::vector<nn::NamedParam> params() override { return net_.params(); }

  Vector forward(const std::vector<int>& ids, bool training, Rng*) override {
    Vector lr(static_cast<Eigen::Index>(ids.size()));
    if (training) {
      caches_.assign(ids.size(), {});
      for (std::size_t i = 0; i < ids.size(); ++i)
        lr[static_cast<Eigen::Index>(i)] = net_.forward_cached(embeddings_[ids[i]], caches_[i]);
    } else {
      for (std::size_t i = 0; i < ids.size(); ++i)
        lr[static_cast<Eigen::Index>(i)] = net_.log_risk(embeddings_[ids[i]]);
    }
    return lr;
  }

  void backward(const std::vector<int>& ids, const Vector& dlr) override {
    for (std::size_t i = 0; i < ids.size(); ++i)
      net_.backward(caches_[i], dlr[static_cast<Eigen::Index>(i)]);
  }

 private:
  Net& net_;
  const std::vector<Matrix>& embeddings_;
  std::vector<typename Net::Cache> caches_;
};

class FusionBatch final : public experiment::CoxBatchModel {
 public:
  FusionBatch(fusion::IntermediateFusionModel& model, const Matrix& vc, const Matrix& vp,
              const Matrix& vr, const std::vector<fusion::ModalityMask>& masks)
      : model_(model), vc_(vc), vp_(vp), vr_(vr), masks_(masks) {}

  std::vector<nn::NamedParam> params() override { return model_.params(); }

  Vector forward(const std::vector<int>& ids, bool training, Rng* rng) override {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Matrix bc(n, vc_.cols()), bp(n, vp_.cols()), br(n, vr_.cols());
    std::vector<fusion::ModalityMask> bm(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      bc.row(r) = vc_.row(ids[i]);
      bp.row(r) = vp_.row(ids[i]);
      br.row(r) = vr_.row(ids[i]);
      bm[i] = masks_[ids[i]];
    }
    return model_.forward(bc, bp, br, bm, training ? &cache_ : nullptr, training, rng);
  }

  void backward(const std::vector<int>&, const Vector& dlr) override {
    model_.backward(cache_, dlr);
  }

 private:
  fusion::IntermediateFusionModel& model_;
  const Matrix &vc_, &vp_, &vr_;
  const std::vector<fusion::ModalityMask>& masks_;
  fusion::IntermediateFusionModel::Cache cache_;
};

std::vector<int> filter_present(const std::vector<int>& ids,
                                const std::vector<fusion::ModalityMask>& masks,
                                bool fusion::ModalityMask::* member) {
  std::vector<int> kept;
  kept.reserve(ids.size());
  for (int id : ids)
    if (masks[id].*member) kept.push_back(id);
  return kept;
}

experiment::TrainConfig encoder_train_config(const runconfig::RunConfig& c) {
  experiment::TrainConfig tc;
  tc.optimizer = c.training.encoder_optimizer;
  tc.learning_rate = c.training.encoder_learning_rate;
  tc.weight_decay = c.training.encoder_weight_decay;
  tc.max_epochs = c.training.max_epochs;
  tc.min_epochs_before_stop = c.training.min_epochs_before_stop;
  tc.patience = c.training.patience;
  return tc;
}

experiment::TrainConfig fusion_train_config(const runconfig::RunConfig& c) {
  experiment::TrainConfig tc;
  tc.optimizer = c.training.optimizer;
  tc.learning_rate = c.training.learning_rate;
  tc.weight_decay = c.training.weight_decay;
  tc.max_epochs = c.training.max_epochs;
  tc.min_epochs_before_stop = c.training.min_epochs_before_stop;
  tc.patience = c.training.patience;
  return tc;
}

experiment::EpochLogger stage_logger(const LogSink& sink, const char* stage) {
  if (!sink) return nullptr;
  std::string tag(stage);
  return [sink, tag](int epoch, double train_loss, double val_loss) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s epoch %d train_loss %.6f val_loss %.6f", tag.c_str(),
                  epoch, train_loss, val_loss);
    sink(buf);
  };
}

double apply_head(const nn::Linear& head, const Vector& pooled) {
  return (head.weight.value * pooled)(0) + head.bias.value(0, 0);
}

// Tensor enumeration mirroring params() order, for whole-net aggregation.
void collect_linear(std::vector<Matrix>& out, const nn::Linear& l) {
  out.push_back(l.weight.value);
  out.push_back(l.bias.value);
}

std::vector<Matrix> pathology_tensor_values(const encoders::PathologyNet& n) {
  std::vector<Matrix> out;
  collect_linear(out, n.reduce);
  collect_linear(out, n.scorer.fc1);
  collect_linear(out, n.scorer.fc2);
  collect_linear(out, n.head);
  return out;
}

std::vector<Matrix> radiology_tensor_values(const encoders::RadiologyNet& n) {
  std::vector<Matrix> out;
  collect_linear(out, n.reduce1);
  collect_linear(out, n.reduce2);
  collect_linear(out, n.scorer.fc1);
  collect_linear(out, n.scorer.fc2);
  collect_linear(out, n.head);
  return out;
}

template <typename Net>
void assign_tensor_values(Net& net, const std::vector<Matrix>& values) {
  auto params = net.params();
  if (params.size() != values.size())
    throw std::invalid_argument("aggregated tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = values[i];
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file " + path);
  out << content;
}

void write_fold_dir(const std::string& dir, FoldModels& fold,
                    const encoders::ClinicalSchema& schema) {
  fs::create_directories(dir);
  save_fold_checkpoint(dir + "/checkpoint.pfmw", fold, schema);
  dataio::write_curves_csv(dir + "/curves.csv", fold.fusion_train.train_curve,
                           fold.fusion_train.val_curve);
  if (!fold.pathology_train.train_curve.empty())
    dataio::write_curves_csv(dir + "/pathology_curves.csv", fold.pathology_train.train_curve,
                             fold.pathology_train.val_curve);
  if (!fold.radiology_train.train_curve.empty())
    dataio::write_curves_csv(dir + "/radiology_curves.csv", fold.radiology_train.train_curve,
                             fold.radiology_train.val_curve);
}

LogSink console_sink(int verbosity, const std::string& tag) {
  if (verbosity < 1) return nullptr;
  return [tag](const std::string& line) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cout << tag << " " << line << std::endl;
  };
}

ordered_json config_echo_json(const runconfig::RunConfig& config) {
  return ordered_json::parse(runconfig::render_config(config));
}

void write_metrics_json(const std::string& path, ordered_json doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

/// Log-risk of one held-out subject under one fold's stack, following the
/// configured fusion mode. Late mode uses the single-fold ensemble.
double fold_holdout_log_risk(const FoldModels& fold, const LateScorer* late,
                             const dataio::Dataset& data, int subject,
                             const encoders::ClinicalSchema& schema,
                             const runconfig::RunConfig& config) {
  if (config.fusion.mode == runconfig::FusionRunConfig::Mode::intermediate)
    return intermediate_log_risk(fold, data, subject, schema);
  auto scores = late->score(data, subject, schema);
  return LateScorer::reduce(scores, config.fusion.modality_combination, config.fusion.weight_agg,
                            config.fusion.score_agg);
}

}  // namespace

ClinicalFoldModel fit_clinical(const std::vector<encoders::ClinicalRecord>& records,
                               const std::vector<SurvivalLabel>& labels,
                               const std::vector<int>& train_ids,
                               const encoders::ClinicalSchema& schema) {
  std::vector<encoders::ClinicalRecord> train_records;
  train_records.reserve(train_ids.size());
  for (int id : train_ids) train_records.push_back(records[id]);

  ClinicalFoldModel model;
  model.stats = encoders::compute_clinical_stats(train_records, schema);
  Matrix x = encoders::encode_clinical_matrix(train_records, schema, model.stats, true);

  // Categories unseen in a training split yield all-constant dummy columns;
  // fit on the varying columns and pin the dropped coefficients at zero.
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x.col(j).maxCoeff() > x.col(j).minCoeff()) keep.push_back(static_cast<int>(j));
  if (keep.empty()) throw std::runtime_error("degenerate covariate");

  auto train_labels = experiment::gather_labels(labels, train_ids);
  Vector beta = Vector::Zero(x.cols());
  if (static_cast<Eigen::Index>(keep.size()) == x.cols()) {
    beta = survival::fit_cph(x, train_labels).model.beta;
  } else {
    Matrix xk(x.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
      xk.col(static_cast<Eigen::Index>(j)) = x.col(keep[j]);
    Vector bk = survival::fit_cph(xk, train_labels).model.beta;
    for (std::size_t j = 0; j < keep.size(); ++j) beta[keep[j]] = bk[static_cast<Eigen::Index>(j)];
  }
  model.beta = beta;
  return model;
}

double clinical_log_risk(const ClinicalFoldModel& model, const encoders::ClinicalRecord& record,
                         const encoders::ClinicalSchema& schema) {
  Vector s = encoders::encode_clinical_dummy(record, schema, model.stats);
  return model.beta.dot(s);
}

FoldModels::FoldModels(const runconfig::RunConfig& config,
                       const encoders::ClinicalSchema& schema)
    : pathology(config.data.pathology_dim, config.model.pooled_dim, config.model.scorer_hidden,
                config.model.top_k),
      radiology(config.data.radiology_dim, config.model.radiology_hidden,
                config.model.pooled_dim, config.model.scorer_hidden),
      fused(make_fusion_config(config, schema)) {}

FoldModels train_fold_models(const dataio::Dataset& data,
                             const encoders::ClinicalSchema& schema,
                             const runconfig::RunConfig& config,
                             const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                             std::uint64_t fold_seed, const LogSink& log) {
  FoldModels fm(config, schema);
  fm.train_ids = train_ids;
  fm.val_ids = val_ids;

  fm.clinical = fit_clinical(data.records, data.labels, train_ids, schema);

  auto enc_cfg = encoder_train_config(config);

  {
    Rng init_rng(derive_seed(fold_seed, 1));
    fm.pathology.init(init_rng);
    auto tr = filter_present(train_ids, data.masks, &fusion::ModalityMask::pathology);
    auto va = filter_present(val_ids, data.masks, &fusion::ModalityMask::pathology);
    if (!tr.empty() && !va.empty()) {
      EncoderBatch<encoders::PathologyNet> batch(fm.pathology, data.pathology);
      enc_cfg.seed = derive_seed(fold_seed, 0xA1);
      fm.pathology_train =
          experiment::train_fold(batch, tr, experiment::gather_labels(data.labels, tr), va,
                                 experiment::gather_labels(data.labels, va), enc_cfg,
                                 stage_logger(log, "pathology"));
    } else if (log) {
      log("pathology: no embeddings in split, encoder left at initialization");
    }
  }

  {
    Rng init_rng(derive_seed(fold_seed, 2));
    fm.radiology.init(init_rng);
    auto tr = filter_present(train_ids, data.masks, &fusion::ModalityMask::radiology);
    auto va = filter_present(val_ids, data.masks, &fusion::ModalityMask::radiology);
    if (!tr.empty() && !va.empty()) {
      EncoderBatch<encoders::RadiologyNet> batch(fm.radiology, data.radiology);
      enc_cfg.seed = derive_seed(fold_seed, 0xA2);
      fm.radiology_train =
          experiment::train_fold(batch, tr, experiment::gather_labels(data.labels, tr), va,
                                 experiment::gather_labels(data.labels, va), enc_cfg,
                                 stage_logger(log, "radiology"));
    } else if (log) {
      log("radiology: no embeddings in split, encoder left at initialization");
    }
  }

  // Pooled features for every subject under this fold's encoders and
  // clinical statistics; absent modalities stay zero rows (masked later).
  const int n = data.size();
  Matrix vc(n, schema.one_hot_width());
  Matrix vp = Matrix::Zero(n, config.model.pooled_dim);
  Matrix vr = Matrix::Zero(n, config.model.pooled_dim);
  for (int s = 0; s < n; ++s) {
    vc.row(s) = encoders::encode_clinical_vector(data.records[s], schema, fm.clinical.stats);
    if (data.masks[s].pathology) vp.row(s) = fm.pathology.pool(data.pathology[s]);
    if (data.masks[s].radiology) vr.row(s) = fm.radiology.pool(data.radiology[s]);
  }

  {
    Rng init_rng(derive_seed(fold_seed, 3));
    fm.fused.init(init_rng);
    FusionBatch batch(fm.fused, vc, vp, vr, data.masks);
    auto fus_cfg = fusion_train_config(config);
    fus_cfg.seed = derive_seed(fold_seed, 0xA3);
    fm.fusion_train = experiment::train_fold(
        batch, train_ids, experiment::gather_labels(data.labels, train_ids), val_ids,
        experiment::gather_labels(data.labels, val_ids), fus_cfg, stage_logger(log, "fusion"));
  }
  return fm;
}

double intermediate_log_risk(const FoldModels& fold, const dataio::Dataset& data, int subject,
                             const encoders::ClinicalSchema& schema,
                             const fusion::ModalityMask& restrict_mask) {
  fusion::ModalityMask mask = data.masks[subject];
  mask.clinical = mask.clinical && restrict_mask.clinical;
  mask.pathology = mask.pathology && restrict_mask.pathology;
  mask.radiology = mask.radiology && restrict_mask.radiology;

  const int pooled = fold.fused.cfg.pooled_dim;
  Vector vc = encoders::encode_clinical_vector(data.records[subject], schema, fold.clinical.stats);
  Vector vp = mask.pathology ? Vector(fold.pathology.pool(data.pathology[subject]))
                             : Vector(Vector::Zero(pooled));
  Vector vr = mask.radiology ? Vector(fold.radiology.pool(data.radiology[subject]))
                             : Vector(Vector::Zero(pooled));
  return fold.fused.forward_log_risk(vc, vp, vr, mask);
}

LateScorer::LateScorer(std::vector<const FoldModels*> folds, bool aggregate_pooling)
    : folds_(std::move(folds)), aggregate_pooling_(aggregate_pooling) {
  if (folds_.empty()) throw std::invalid_argument("no fold models");

  std::vector<std::vector<Matrix>> phead, rhead, pnet, rnet;
  for (const FoldModels* f : folds_) {
    phead.push_back({f->pathology.head.weight.value, f->pathology.head.bias.value});
    rhead.push_back({f->radiology.head.weight.value, f->radiology.head.bias.value});
    if (aggregate_pooling_) {
      pnet.push_back(pathology_tensor_values(f->pathology));
      rnet.push_back(radiology_tensor_values(f->radiology));
    }
  }

  for (int a = 0; a < 2; ++a) {
    const auto mode = kAggModes[a];
    auto ph = fusion::aggregate_model_weights(phead, mode);
    pathology_head_[a] = nn::Linear(folds_[0]->pathology.head.in_dim(), 1);
    pathology_head_[a].weight.value = ph[0];
    pathology_head_[a].bias.value = ph[1];

    auto rh = fusion::aggregate_model_weights(rhead, mode);
    radiology_head_[a] = nn::Linear(folds_[0]->radiology.head.in_dim(), 1);
    radiology_head_[a].weight.value = rh[0];
    radiology_head_[a].bias.value = rh[1];

    if (aggregate_pooling_) {
      pathology_net_[a] = folds_[0]->pathology;
      assign_tensor_values(pathology_net_[a], fusion::aggregate_model_weights(pnet, mode));
      radiology_net_[a] = folds_[0]->radiology;
      assign_tensor_values(radiology_net_[a], fusion::aggregate_model_weights(rnet, mode));
    }
  }
}

LateScorer::SubjectScores LateScorer::score(const dataio::Dataset& data, int subject,
                                            const encoders::ClinicalSchema& schema) const {
  SubjectScores out;
  out.mask = data.masks[subject];
  const auto& record = data.records[subject];

  out.clinical.reserve(folds_.size());
  for (const FoldModels* f : folds_)
    out.clinical.push_back(clinical_log_risk(f->clinical, record, schema));

  if (out.mask.pathology) {
    const Matrix& emb = data.pathology[subject];
    if (aggregate_pooling_) {
      for (int a = 0; a < 2; ++a)
        out.pathology[a].assign(folds_.size(), pathology_net_[a].log_risk(emb));
    } else {
      for (const FoldModels* f : folds_) {
        Vector pooled = f->pathology.pool(emb);
        for (int a = 0; a < 2; ++a)
          out.pathology[a].push_back(apply_head(pathology_head_[a], pooled));
      }
    }
  }
  if (out.mask.radiology) {
    const Matrix& emb = data.radiology[subject];
    if (aggregate_pooling_) {
      for (int a = 0; a < 2; ++a)
        out.radiology[a].assign(folds_.size(), radiology_net_[a].log_risk(emb));
    } else {
      for (const FoldModels* f : folds_) {
        Vector pooled = f->radiology.pool(emb);
        for (int a = 0; a < 2; ++a)
          out.radiology[a].push_back(apply_head(radiology_head_[a], pooled));
      }
    }
  }
  return out;
}

double LateScorer::reduce(const SubjectScores& scores, fusion::Combination combo,
                          fusion::AggMode weight_agg, fusion::AggMode score_agg) {
  const bool want_c = combo == fusion::Combination::C || combo == fusion::Combination::CP ||
                      combo == fusion::Combination::CPR_avg ||
                      combo == fusion::Combination::CPR_med;
  const bool want_p = combo == fusion::Combination::P || combo == fusion::Combination::CP ||
                      combo == fusion::Combination::CPR_avg ||
                      combo == fusion::Combination::CPR_med;
  const bool want_r = combo == fusion::Combination::R ||
                      combo == fusion::Combination::CPR_avg ||
                      combo == fusion::Combination::CPR_med;

  auto lrs_reduce = [&](const std::vector<double>& v) {
    return score_agg == fusion::AggMode::median ? fusion::median(v) : fusion::mean(v);
  };

  const int mw = agg_index(weight_agg);
  std::vector<double> vals;
  if (want_c && scores.mask.clinical && !scores.clinical.empty())
    vals.push_back(lrs_reduce(scores.clinical));
  if (want_p && scores.mask.pathology && !scores.pathology[mw].empty())
    vals.push_back(lrs_reduce(scores.pathology[mw]));
  if (want_r && scores.mask.radiology && !scores.radiology[mw].empty())
    vals.push_back(lrs_reduce(scores.radiology[mw]));
  if (vals.empty())
    throw std::runtime_error("subject has no modality required by combination " +
                             fusion::to_string(combo));

  const auto cross = combo == fusion::Combination::CPR_avg ? fusion::AggMode::mean
                                                           : fusion::AggMode::median;
  return fusion::late_fuse(vals, cross);
}

void save_fold_checkpoint(const std::string& path, FoldModels& fold,
                          const encoders::ClinicalSchema& schema) {
  const auto n_attrs = static_cast<Eigen::Index>(schema.attributes.size());
  std::vector<checkpoint::TensorRecord> records;
  records.push_back({"clinical.beta", Matrix(fold.clinical.beta.transpose())});

  Matrix mean(1, n_attrs), stdev(1, n_attrs), mode(1, n_attrs);
  for (Eigen::Index a = 0; a < n_attrs; ++a) {
    mean(0, a) = fold.clinical.stats.mean[static_cast<std::size_t>(a)];
    stdev(0, a) = fold.clinical.stats.stdev[static_cast<std::size_t>(a)];
    mode(0, a) = static_cast<double>(fold.clinical.stats.mode_index[static_cast<std::size_t>(a)]);
  }
  records.push_back({"clinical.mean", mean});
  records.push_back({"clinical.stdev", stdev});
  records.push_back({"clinical.mode", mode});

  for (const auto& np : fold.pathology.params()) records.push_back({np.name, np.param->value});
  for (const auto& np : fold.radiology.params()) records.push_back({np.name, np.param->value});
  for (const auto& np : fold.fused.params()) records.push_back({np.name, np.param->value});
  checkpoint::save_tensors(path, records);
}

FoldModels load_fold_checkpoint(const std::string& path, const runconfig::RunConfig& config,
                                const encoders::ClinicalSchema& schema) {
  FoldModels fm(config, schema);
  auto records = checkpoint::load_tensors(path);
  std::unordered_map<std::string, const Matrix*> by_name;
  by_name.reserve(records.size());
  for (const auto& rec : records) {
    if (!by_name.emplace(rec.name, &rec.value).second)
      throw std::runtime_error("duplicate tensor " + rec.name + " in " + path);
  }
  std::size_t used = 0;
  auto need = [&](const std::string& name) -> const Matrix& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint " + path + " is missing tensor " + name);
    ++used;
    return *it->second;
  };

  fm.clinical.beta = need("clinical.beta").row(0).transpose();
  const auto n_attrs = schema.attributes.size();
  const Matrix& mean = need("clinical.mean");
  const Matrix& stdev = need("clinical.stdev");
  const Matrix& mode = need("clinical.mode");
  if (mean.cols() != static_cast<Eigen::Index>(n_attrs) || mean.rows() != 1 ||
      stdev.cols() != mean.cols() || mode.cols() != mean.cols())
    throw std::runtime_error("clinical statistics shape mismatch in " + path);
  fm.clinical.stats.mean.resize(n_attrs);
  fm.clinical.stats.stdev.resize(n_attrs);
  fm.clinical.stats.mode_index.resize(n_attrs);
  for (std::size_t a = 0; a < n_attrs; ++a) {
    fm.clinical.stats.mean[a] = mean(0, static_cast<Eigen::Index>(a));
    fm.clinical.stats.stdev[a] = stdev(0, static_cast<Eigen::Index>(a));
    fm.clinical.stats.mode_index[a] =
        static_cast<int>(std::lround(mode(0, static_cast<Eigen::Index>(a))));
  }

  auto load_params = [&](std::vector<nn::NamedParam> params) {
    for (auto& np : params) {
      const Matrix& value = need(np.name);
      if (value.rows() != np.param->value.rows() || value.cols() != np.param->value.cols())
        throw std::runtime_error("tensor shape mismatch for " + np.name + " in " + path);
      np.param->value = value;
    }
  };
  load_params(fm.pathology.params());
  load_params(fm.radiology.params());
  load_params(fm.fused.params());

  if (used != records.size())
    throw std::runtime_error("checkpoint " + path + " holds unexpected extra tensors");
  return fm;
}

std::string fold_dir_name(int fold) { return "fold_" + std::to_string(fold); }

std::string fold_dir_name(int outer, int inner) {
  return "fold_o" + std::to_string(outer) + "_i" + std::to_string(inner);
}

void run_train(const dataio::Dataset& data, const encoders::ClinicalSchema& schema,
               const runconfig::RunConfig& config_in, const std::string& out_dir,
               int parallelism, int verbosity) {
  runconfig::RunConfig config = config_in;
  config.cv.mode = runconfig::CvConfig::Mode::plain;

  const int n = data.size();
  const int k = config.cv.k;
  auto folds = experiment::make_folds(n, k, config.training.seed, config.cv.stratify_events,
                                      &data.labels);

  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.json", runconfig::render_config(config));

  std::vector<std::unique_ptr<FoldModels>> models(static_cast<std::size_t>(k));
  experiment::parallel_for(k, parallelism <= 0 ? k : parallelism, [&](int f) {
    try {
      auto train = experiment::complement_ids(n, folds[f]);
      auto fm = std::make_unique<FoldModels>(train_fold_models(
          data, schema, config, train, folds[f], derive_seed(config.training.seed, f + 1),
          console_sink(verbosity, fold_dir_name(f))));
      write_fold_dir(out_dir + "/" + fold_dir_name(f), *fm, schema);
      models[static_cast<std::size_t>(f)] = std::move(fm);
    } catch (const runconfig::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(fold_dir_name(f) + ": " + e.what());
    }
  });

  // Held-out metrics: each subject is scored by the fold that validated on it.
  std::vector<double> per_fold;
  per_fold.reserve(static_cast<std::size_t>(k));
  Vector oof(n);
  for (int f = 0; f < k; ++f) {
    const auto& fm = *models[static_cast<std::size_t>(f)];
    std::unique_ptr<LateScorer> late;
    if (config.fusion.mode == runconfig::FusionRunConfig::Mode::late)
      late = std::make_unique<LateScorer>(std::vector<const FoldModels*>{&fm},
                                          config.fusion.aggregate_pooling_weights);
    Vector lrs(static_cast<Eigen::Index>(folds[f].size()));
    for (std::size_t i = 0; i < folds[f].size(); ++i) {
      const double lr = fold_holdout_log_risk(fm, late.get(), data, folds[f][i], schema, config);
      lrs[static_cast<Eigen::Index>(i)] = lr;
      oof[folds[f][i]] = lr;
    }
    per_fold.push_back(
        survival::concordance_index(lrs, experiment::gather_labels(data.labels, folds[f])));
  }
  auto summary = experiment::summarize(per_fold);
  const double oof_c = survival::concordance_index(oof, data.labels);

  ordered_json doc;
  doc["c_index_mean"] = summary.mean;
  doc["c_index_sigma"] = summary.sigma;
  doc["per_fold"] = summary.per_fold;
  doc["c_index_oof"] = oof_c;
  doc["seed"] = config.training.seed;
  doc["config"] = config_echo_json(config);
  write_metrics_json(out_dir + "/metrics.json", doc);
}

void run_nested_cv(const dataio::Dataset& data, const encoders::ClinicalSchema& schema,
                   const runconfig::RunConfig& config_in, const std::string& out_dir,
                   int parallelism, int verbosity) {
  runconfig::RunConfig config = config_in;
  config.cv.mode = runconfig::CvConfig::Mode::nested;

  const int n = data.size();
  const int outer_k = config.cv.outer_k;
  const int inner_k = config.cv.inner_k;
  auto plan = experiment::make_nested_plan(n, outer_k, inner_k, config.training.seed,
                                           config.cv.stratify_events, &data.labels);

  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.json", runconfig::render_config(config));

  const int jobs = outer_k * inner_k;
  std::vector<std::unique_ptr<FoldModels>> models(static_cast<std::size_t>(jobs));
  std::vector<double> cindices(static_cast<std::size_t>(jobs), 0.0);

  experiment::parallel_for(jobs, parallelism <= 0 ? jobs : parallelism, [&](int job) {
    const int o = job / inner_k;
    const int i = job % inner_k;
    try {
      const auto& test = plan.outer[static_cast<std::size_t>(o)].test;
      const auto& val = plan.outer[static_cast<std::size_t>(o)].inner_val[static_cast<std::size_t>(i)];
      std::vector<int> exclude = test;
      exclude.insert(exclude.end(), val.begin(), val.end());
      auto train = experiment::complement_ids(n, exclude);

      auto fm = std::make_unique<FoldModels>(train_fold_models(
          data, schema, config, train, val, derive_seed(config.training.seed, job + 7),
          console_sink(verbosity, fold_dir_name(o, i))));
      write_fold_dir(out_dir + "/" + fold_dir_name(o, i), *fm, schema);

      Vector lrs(static_cast<Eigen::Index>(test.size()));
      for (std::size_t t = 0; t < test.size(); ++t)
        lrs[static_cast<Eigen::Index>(t)] = intermediate_log_risk(*fm, data, test[t], schema);
      cindices[static_cast<std::size_t>(job)] =
          survival::concordance_index(lrs, experiment::gather_labels(data.labels, test));
      models[static_cast<std::size_t>(job)] = std::move(fm);
    } catch (const runconfig::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(fold_dir_name(o, i) + ": " + e.what());
    }
  });

  auto summary = experiment::summarize(cindices);
  ordered_json doc;
  doc["c_index_mean"] = summary.mean;
  doc["c_index_sigma"] = summary.sigma;
  doc["per_fold"] = summary.per_fold;
  doc["seed"] = config.training.seed;
  doc["config"] = config_echo_json(config);
  write_metrics_json(out_dir + "/metrics.json", doc);

  // Per outer fold: cache each test subject's fold-score table once, then
  // evaluate every grid cell from the cache.
  std::vector<std::vector<LateScorer::SubjectScores>> tables(
      static_cast<std::size_t>(outer_k));
  for (int o = 0; o < outer_k; ++o) {
    std::vector<const FoldModels*> fold_ptrs;
    for (int i = 0; i < inner_k; ++i)
      fold_ptrs.push_back(models[static_cast<std::size_t>(o * inner_k + i)].get());
    LateScorer scorer(fold_ptrs, config.fusion.aggregate_pooling_weights);
    const auto& test = plan.outer[static_cast<std::size_t>(o)].test;
    auto& table = tables[static_cast<std::size_t>(o)];
    table.reserve(test.size());
    for (int s : test) table.push_back(scorer.score(data, s, schema));
  }

  auto cell_summary = [&](const std::function<double(int o, std::size_t t, int s)>& lr_fn) {
    std::vector<double> outer_c;
    outer_c.reserve(static_cast<std::size_t>(outer_k));
    for (int o = 0; o < outer_k; ++o) {
      const auto& test = plan.outer[static_cast<std::size_t>(o)].test;
      Vector lrs(static_cast<Eigen::Index>(test.size()));
      for (std::size_t t = 0; t < test.size(); ++t)
        lrs[static_cast<Eigen::Index>(t)] = lr_fn(o, t, test[t]);
      outer_c.push_back(
          survival::concordance_index(lrs, experiment::gather_labels(data.labels, test)));
    }
    return experiment::summarize(outer_c);
  };

  std::string grid = "model,MED MW + MED LRS,MED MW + AVG LRS,AVG MW + MED LRS,AVG MW + AVG LRS\n";
  auto cell_text = [](const experiment::MetricsSummary& s) {
    return dataio::format_g9(s.mean) + "±" + dataio::format_g9(s.sigma);
  };

  for (auto combo : fusion::all_combinations()) {
    grid += fusion::to_string(combo);
    for (auto mw : kAggModes) {
      for (auto lrs_mode : kAggModes) {
        auto s = cell_summary([&](int o, std::size_t t, int) {
          return LateScorer::reduce(tables[static_cast<std::size_t>(o)][t], combo, mw, lrs_mode);
        });
        grid += "," + cell_text(s);
      }
    }
    grid += "\n";
  }

  const fusion::ModalityMask cp_mask{true, true, false};
  const fusion::ModalityMask cpr_mask{true, true, true};
  for (const auto& [label, restrict_mask] :
       {std::pair<std::string, fusion::ModalityMask>{"intermediate C+P", cp_mask},
        std::pair<std::string, fusion::ModalityMask>{"intermediate C+P+R", cpr_mask}}) {
    auto s = cell_summary([&](int o, std::size_t, int subject) {
      std::vector<double> fold_lrs;
      fold_lrs.reserve(static_cast<std::size_t>(inner_k));
      for (int i = 0; i < inner_k; ++i)
        fold_lrs.push_back(intermediate_log_risk(
            *models[static_cast<std::size_t>(o * inner_k + i)], data, subject, schema,
            restrict_mask));
      return fusion::ensemble_intermediate(fold_lrs);
    });
    const std::string cell = cell_text(s);
    grid += label + "," + cell + "," + cell + "," + cell + "," + cell + "\n";
  }
  write_text_file(out_dir + "/grid.csv", grid);
}

std::vector<dataio::Prediction> predict_run(const std::string& run_dir,
                                            const dataio::Dataset& data,
                                            const encoders::ClinicalSchema& schema) {
  auto config = runconfig::load_config(run_dir + "/config.json");

  std::vector<std::string> fold_dirs;
  if (config.cv.mode == runconfig::CvConfig::Mode::nested) {
    for (int o = 0; o < config.cv.outer_k; ++o)
      for (int i = 0; i < config.cv.inner_k; ++i) fold_dirs.push_back(fold_dir_name(o, i));
  } else {
    for (int f = 0; f < config.cv.k; ++f) fold_dirs.push_back(fold_dir_name(f));
  }

  std::vector<FoldModels> folds;
  folds.reserve(fold_dirs.size());
  for (const auto& d : fold_dirs)
    folds.push_back(load_fold_checkpoint(run_dir + "/" + d + "/checkpoint.pfmw", config, schema));

  std::unique_ptr<LateScorer> late;
  if (config.fusion.mode == runconfig::FusionRunConfig::Mode::late) {
    std::vector<const FoldModels*> ptrs;
    for (const auto& f : folds) ptrs.push_back(&f);
    late = std::make_unique<LateScorer>(ptrs, config.fusion.aggregate_pooling_weights);
  }

  std::vector<dataio::Prediction> predictions;
  predictions.reserve(static_cast<std::size_t>(data.size()));
  for (int s = 0; s < data.size(); ++s) {
    double lr = 0.0;
    if (late) {
      lr = LateScorer::reduce(late->score(data, s, schema), config.fusion.modality_combination,
                              config.fusion.weight_agg, config.fusion.score_agg);
    } else {
      std::vector<double> fold_lrs;
      fold_lrs.reserve(folds.size());
      for (const auto& f : folds)
        fold_lrs.push_back(intermediate_log_risk(f, data, s, schema));
      lr = fusion::ensemble_intermediate(fold_lrs);
    }
    predictions.push_back({data.case_ids[s], lr, survival::ttr_from_log_risk(lr)});
  }
  return predictions;
}

void evaluate_predictions(const std::vector<dataio::Prediction>& predictions,
                          const std::vector<dataio::LabeledCase>& labels,
                          const std::string& out_file, const EvaluateOptions& options) {
  std::unordered_map<std::string, const SurvivalLabel*> by_id;
  by_id.reserve(labels.size());
  for (const auto& lc : labels) {
    if (!by_id.emplace(lc.case_id, &lc.label).second)
      throw std::runtime_error("duplicate case id in labels: " + lc.case_id);
  }

  std::vector<std::string> unmatched;
  std::vector<SurvivalLabel> matched;
  Vector lrs(static_cast<Eigen::Index>(predictions.size()));
  std::unordered_map<std::string, int> seen;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    auto it = by_id.find(predictions[i].case_id);
    if (it == by_id.end()) {
      unmatched.push_back(predictions[i].case_id);
      continue;
    }
    if (++seen[predictions[i].case_id] > 1)
      throw std::runtime_error("duplicate case id in predictions: " + predictions[i].case_id);
    lrs[static_cast<Eigen::Index>(matched.size())] = predictions[i].log_risk;
    matched.push_back(*it->second);
  }
  for (const auto& lc : labels)
    if (!seen.count(lc.case_id)) unmatched.push_back(lc.case_id);
  if (!unmatched.empty()) {
    std::string joined;
    for (const auto& id : unmatched) joined += (joined.empty() ? "" : ", ") + id;
    throw std::runtime_error("unmatched case ids: " + joined);
  }

  lrs.conservativeResize(static_cast<Eigen::Index>(matched.size()));
  ordered_json doc;
  doc["n"] = matched.size();
  doc["c_index"] = survival::concordance_index(lrs, matched);

  if (options.binarize_months > 0.0) {
    // Positive: recurrence observed by the threshold. Negative: known
    // recurrence-free past it. Censored before the threshold is unknowable
    // and excluded.
    std::vector<char> binary;
    std::vector<double> scores;
    int excluded = 0;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      const auto& l = matched[i];
      if (l.event && l.time_months <= options.binarize_months) {
        binary.push_back(1);
        scores.push_back(lrs[static_cast<Eigen::Index>(i)]);
      } else if (l.time_months > options.binarize_months) {
        binary.push_back(0);
        scores.push_back(lrs[static_cast<Eigen::Index>(i)]);
      } else {
        ++excluded;
      }
    }
    Vector score_vec(static_cast<Eigen::Index>(scores.size()));
    for (std::size_t i = 0; i < scores.size(); ++i)
      score_vec[static_cast<Eigen::Index>(i)] = scores[i];
    int n_pos = 0;
    for (char b : binary) n_pos += b;
    doc["binarize_months"] = options.binarize_months;
    doc["n_positive"] = n_pos;
    doc["n_negative"] = static_cast<int>(binary.size()) - n_pos;
    doc["n_excluded"] = excluded;
    doc["roc_auc"] = survival::roc_auc(score_vec, binary);
  }
  write_metrics_json(out_file, doc);
}

}  // namespace profuse::pipeline
