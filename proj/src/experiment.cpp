#include "profuse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "profuse/survival.hpp"

namespace profuse::experiment {

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "adamw") return Optimizer::adamw;
  throw std::runtime_error("unknown optimizer: " + name);
}

std::string to_string(Optimizer opt) { return opt == Optimizer::adam ? "adam" : "adamw"; }

void AdamState::init(const std::vector<nn::NamedParam>& params) {
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    v.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
  }
  step_count = 0;
}

void adam_step(const std::vector<nn::NamedParam>& params, AdamState& state,
               const TrainConfig& config) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.size() != params.size())
    throw std::invalid_argument("optimizer state does not match parameter list");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& value = params[i].param->value;
    const Matrix& grad = params[i].param->grad;
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      throw std::invalid_argument("gradient shape mismatch");
    if (config.optimizer == Optimizer::adamw && config.weight_decay != 0.0)
      value *= (1.0 - config.learning_rate * config.weight_decay);
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad.cwiseProduct(grad);
    value.array() -= config.learning_rate * (state.m[i].array() / bc1) /
                     ((state.v[i].array() / bc2).sqrt() + eps);
  }
}

namespace {

bool has_event(const std::vector<SurvivalLabel>& labels) {
  for (const auto& l : labels)
    if (l.event) return true;
  return false;
}

std::vector<Matrix> snapshot(const std::vector<nn::NamedParam>& params) {
  std::vector<Matrix> values;
  values.reserve(params.size());
  for (const auto& p : params) values.push_back(p.param->value);
  return values;
}

void restore(const std::vector<nn::NamedParam>& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = values[i];
}

}  // namespace

TrainResult train_fold(CoxBatchModel& model, const std::vector<int>& train_ids,
                       const std::vector<SurvivalLabel>& train_labels,
                       const std::vector<int>& val_ids,
                       const std::vector<SurvivalLabel>& val_labels, const TrainConfig& config,
                       const EpochLogger& log) {
  if (train_ids.size() != train_labels.size() || val_ids.size() != val_labels.size())
    throw std::invalid_argument("ids and labels length mismatch");
  if (!has_event(train_labels) || !has_event(val_labels))
    throw std::runtime_error("no observed events");
  if (config.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");

  auto params = model.params();
  AdamState state;
  state.init(params);
  Rng rng(config.seed);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (auto& p : params) p.param->zero_grad();
    Vector train_lr = model.forward(train_ids, true, &rng);
    auto lg = survival::cox_loss_with_gradient(train_lr, train_labels);
    model.backward(train_ids, lg.grad);
    adam_step(params, state, config);

    Vector val_lr = model.forward(val_ids, false, nullptr);
    const double val_loss = survival::cox_loss(val_lr, val_labels);
    result.train_curve.push_back(lg.loss);
    result.val_curve.push_back(val_loss);
    if (log) log(epoch, lg.loss, val_loss);

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.best_values = snapshot(params);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }

    if (!result.second_diff_epoch)
      result.second_diff_epoch = early_stop_epoch(result.train_curve, 0);
    if (epoch >= config.min_epochs_before_stop && epochs_since_best >= config.patience) break;
  }

  restore(params, result.best_values);
  return result;
}

std::optional<int> early_stop_epoch(const std::vector<double>& curve, int min_epochs) {
  const int n = static_cast<int>(curve.size());
  if (n < 4) return std::nullopt;  // a sign change needs two second differences
  auto d2 = [&](int t) { return curve[t + 1] - 2.0 * curve[t] + curve[t - 1]; };
  for (int t = 2; t <= n - 2; ++t) {
    if (t < min_epochs) continue;
    if (d2(t - 1) * d2(t) < 0.0) return t;
  }
  return std::nullopt;
}

MetricsSummary summarize(const std::vector<double>& cindices) {
  if (cindices.empty()) throw std::invalid_argument("no values to summarize");
  MetricsSummary s;
  s.per_fold = cindices;
  double sum = 0.0;
  for (double v : cindices) sum += v;
  s.mean = sum / static_cast<double>(cindices.size());
  double sq = 0.0;
  for (double v : cindices) sq += (v - s.mean) * (v - s.mean);
  s.sigma = std::sqrt(sq / static_cast<double>(cindices.size()));
  return s;
}

std::vector<std::vector<int>> make_folds(int n, int k, std::uint64_t seed, bool stratify,
                                         const std::vector<SurvivalLabel>* labels) {
  if (k < 2) throw std::invalid_argument("k must be >= 2");
  if (n < k) throw std::invalid_argument("fewer subjects than folds");
  std::vector<std::vector<int>> folds(k);
  Rng rng(seed);
  if (stratify && labels) {
    std::vector<int> events, censored;
    for (int i = 0; i < n; ++i) ((*labels)[i].event ? events : censored).push_back(i);
    rng.shuffle(events);
    rng.shuffle(censored);
    int deal = 0;
    for (int id : events) folds[deal++ % k].push_back(id);
    for (int id : censored) folds[deal++ % k].push_back(id);
  } else {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    rng.shuffle(ids);
    for (int p = 0; p < n; ++p) folds[p % k].push_back(ids[p]);
  }
  return folds;
}

NestedPlan make_nested_plan(int n, int outer_k, int inner_k, std::uint64_t seed, bool stratify,
                            const std::vector<SurvivalLabel>* labels) {
  NestedPlan plan;
  auto outer_folds = make_folds(n, outer_k, seed, stratify, labels);
  plan.outer.resize(outer_k);
  for (int o = 0; o < outer_k; ++o) {
    plan.outer[o].test = outer_folds[o];
    std::vector<int> rest = complement_ids(n, outer_folds[o]);
    // Inner split over the outer-train subjects, deterministically re-seeded.
    const std::uint64_t inner_seed = derive_seed(seed, static_cast<std::uint64_t>(o) + 101);
    Rng rng(inner_seed);
    std::vector<int> shuffled = rest;
    if (stratify && labels) {
      std::vector<int> events, censored;
      for (int id : rest) ((*labels)[id].event ? events : censored).push_back(id);
      rng.shuffle(events);
      rng.shuffle(censored);
      shuffled = events;
      shuffled.insert(shuffled.end(), censored.begin(), censored.end());
    } else {
      rng.shuffle(shuffled);
    }
    plan.outer[o].inner_val.assign(inner_k, {});
    for (std::size_t p = 0; p < shuffled.size(); ++p)
      plan.outer[o].inner_val[p % inner_k].push_back(shuffled[p]);
  }
  return plan;
}

std::vector<int> complement_ids(int n, const std::vector<int>& exclude) {
  std::vector<char> drop(n, 0);
  for (int id : exclude) drop[id] = 1;
  std::vector<int> out;
  out.reserve(n - static_cast<int>(exclude.size()));
  for (int i = 0; i < n; ++i)
    if (!drop[i]) out.push_back(i);
  return out;
}

std::vector<SurvivalLabel> gather_labels(const std::vector<SurvivalLabel>& labels,
                                         const std::vector<int>& ids) {
  std::vector<SurvivalLabel> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(labels[id]);
  return out;
}

void parallel_for(int n_jobs, int parallelism, const std::function<void(int)>& fn) {
  if (n_jobs <= 0) return;
  const int workers = std::max(1, std::min(parallelism, n_jobs));
  if (workers == 1) {
    for (int i = 0; i < n_jobs; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n_jobs);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int job = next.fetch_add(1);
        if (job >= n_jobs) return;
        try {
          fn(job);
        } catch (...) {
          errors[job] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

void require_events(const std::vector<SurvivalLabel>& labels, const std::string& where) {
  if (!has_event(labels)) throw std::runtime_error("event-free split in " + where);
}

}  // namespace

std::vector<FoldOutcome> run_kfold_train(const std::vector<SurvivalLabel>& labels,
                                         const ModelBuilder& builder, const TrainConfig& config,
                                         int k, bool stratify, int parallelism) {
  const int n = static_cast<int>(labels.size());
  auto folds = make_folds(n, k, config.seed, stratify, &labels);
  std::vector<FoldOutcome> outcomes(k);

  parallel_for(k, parallelism, [&](int f) {
    FoldOutcome& out = outcomes[f];
    out.val_ids = folds[f];
    out.train_ids = complement_ids(n, folds[f]);
    auto train_labels = gather_labels(labels, out.train_ids);
    auto val_labels = gather_labels(labels, out.val_ids);
    const std::string fold_name = "fold " + std::to_string(f);
    require_events(train_labels, fold_name + " train split");
    require_events(val_labels, fold_name + " validation split");

    const std::uint64_t fold_seed = derive_seed(config.seed, static_cast<std::uint64_t>(f) + 1);
    out.model = builder(fold_seed);
    TrainConfig fold_config = config;
    fold_config.seed = derive_seed(fold_seed, 0xD0);
    out.result = train_fold(*out.model, out.train_ids, train_labels, out.val_ids, val_labels,
                            fold_config);
  });
  return outcomes;
}

MetricsSummary run_nested_cv(const std::vector<SurvivalLabel>& labels,
                             const ModelBuilder& builder, const TrainConfig& config, int outer_k,
                             int inner_k, bool stratify, int parallelism) {
  const int n = static_cast<int>(labels.size());
  auto plan = make_nested_plan(n, outer_k, inner_k, config.seed, stratify, &labels);
  const int n_jobs = outer_k * inner_k;
  std::vector<double> cindices(n_jobs, 0.0);

  parallel_for(n_jobs, parallelism, [&](int job) {
    const int o = job / inner_k;
    const int i = job % inner_k;
    const auto& outer = plan.outer[o];
    const auto& val_ids = outer.inner_val[i];
    std::vector<char> excluded(n, 0);
    for (int id : outer.test) excluded[id] = 1;
    for (int id : val_ids) excluded[id] = 1;
    std::vector<int> train_ids;
    for (int s = 0; s < n; ++s)
      if (!excluded[s]) train_ids.push_back(s);

    auto train_labels = gather_labels(labels, train_ids);
    auto val_labels = gather_labels(labels, val_ids);
    auto test_labels = gather_labels(labels, outer.test);
    const std::string where =
        "outer fold " + std::to_string(o) + " inner fold " + std::to_string(i);
    require_events(train_labels, where + " train split");
    require_events(val_labels, where + " validation split");
    require_events(test_labels, "outer fold " + std::to_string(o) + " test split");

    const std::uint64_t job_seed = derive_seed(config.seed, static_cast<std::uint64_t>(job) + 7);
    auto model = builder(job_seed);
    TrainConfig job_config = config;
    job_config.seed = derive_seed(job_seed, 0xD0);
    train_fold(*model, train_ids, train_labels, val_ids, val_labels, job_config);

    Vector test_lr = model->forward(outer.test, false, nullptr);
    cindices[job] = survival::concordance_index(test_lr, test_labels);
  });
  return summarize(cindices);
}

}  // namespace profuse::experiment
