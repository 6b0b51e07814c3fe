#include "profuse/runner.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "profuse/dataio.hpp"
#include "profuse/pipeline.hpp"
#include "profuse/runconfig.hpp"
#include "profuse/synthdata.hpp"

namespace profuse::runner {
namespace {

struct SeedFlag {
  std::uint64_t value = 0;
  bool given = false;
};

/// Documented precedence: --seed flag, then PROFUSE_SEED, then config/default.
std::uint64_t resolve_seed(const SeedFlag& flag, std::uint64_t fallback) {
  if (flag.given) return flag.value;
  if (const char* env = std::getenv("PROFUSE_SEED")) {
    std::string text(env);
    std::size_t used = 0;
    unsigned long long parsed = 0;
    try {
      parsed = std::stoull(text, &used);
    } catch (const std::exception&) {
      throw runconfig::ConfigError("PROFUSE_SEED must be an unsigned integer, got '" + text +
                                   "'");
    }
    if (used != text.size())
      throw runconfig::ConfigError("PROFUSE_SEED must be an unsigned integer, got '" + text +
                                   "'");
    return static_cast<std::uint64_t>(parsed);
  }
  return fallback;
}

void check_embedding_dims(const dataio::Dataset& data, const runconfig::RunConfig& config) {
  for (int s = 0; s < data.size(); ++s) {
    if (data.masks[s].pathology &&
        data.pathology[s].cols() != static_cast<Eigen::Index>(config.data.pathology_dim))
      throw std::runtime_error("pathology embedding width for case " + data.case_ids[s] +
                               " does not match configured pathology_dim");
    if (data.masks[s].radiology &&
        data.radiology[s].cols() != static_cast<Eigen::Index>(config.data.radiology_dim))
      throw std::runtime_error("radiology embedding width for case " + data.case_ids[s] +
                               " does not match configured radiology_dim");
  }
}

struct SynthOpts {
  synthdata::SynthConfig config;
  SeedFlag seed;
  std::string out_dir;
  bool permute_labels = false;
  int verbosity = 0;
};

int cmd_synth(SynthOpts& o) {
  if (o.config.signal_to_noise <= 0.0)
    throw runconfig::ConfigError("--snr must be positive");
  if (o.config.censoring_rate_target < 0.0 || o.config.censoring_rate_target >= 1.0)
    throw runconfig::ConfigError("--censoring must be in [0, 1)");
  if (o.config.radiology_sparse_nnz > o.config.radiology_dim)
    throw runconfig::ConfigError("--sparse-nnz cannot exceed --radiology-dim");
  if (o.config.radiology_noise_band > o.config.radiology_dim)
    throw runconfig::ConfigError("--noise-band cannot exceed --radiology-dim");
  if (o.config.patches_min > o.config.patches_max || o.config.patches_min < 1)
    throw runconfig::ConfigError("--patches-min/--patches-max range is invalid");
  if (o.config.slices_min > o.config.slices_max || o.config.slices_min < 1)
    throw runconfig::ConfigError("--slices-min/--slices-max range is invalid");

  o.config.seed = resolve_seed(o.seed, o.config.seed);
  auto cohort = synthdata::generate_cohort(o.config);
  if (o.permute_labels) synthdata::permute_labels(cohort.labels, derive_seed(o.config.seed, 99));

  auto schema = encoders::ClinicalSchema::default_schema();
  dataio::write_cohort(o.out_dir, cohort, schema);
  if (o.verbosity >= 1)
    std::cout << "wrote " << cohort.records.size() << " subjects to " << o.out_dir << std::endl;
  return 0;
}

struct RunOpts {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  SeedFlag seed;
  int parallelism = 0;  // <= 0: one worker per fold job
  int verbosity = 0;
};

runconfig::RunConfig load_run_config(const RunOpts& o) {
  runconfig::RunConfig config;
  if (!o.config_path.empty()) config = runconfig::load_config(o.config_path);
  config.training.seed = resolve_seed(o.seed, config.training.seed);
  return config;
}

dataio::Dataset load_run_dataset(const std::string& data_dir,
                                 const runconfig::RunConfig& config,
                                 const encoders::ClinicalSchema& schema) {
  auto data = dataio::load_dataset(data_dir, schema, config.data.clinical_csv,
                                   config.data.labels_csv, config.data.pathology_dir,
                                   config.data.radiology_dir);
  check_embedding_dims(data, config);
  return data;
}

int cmd_train(const RunOpts& o) {
  auto config = load_run_config(o);
  auto schema = encoders::ClinicalSchema::default_schema();
  auto data = load_run_dataset(o.data_dir, config, schema);
  if (config.cv.mode == runconfig::CvConfig::Mode::nested)
    pipeline::run_nested_cv(data, schema, config, o.out_dir, o.parallelism, o.verbosity);
  else
    pipeline::run_train(data, schema, config, o.out_dir, o.parallelism, o.verbosity);
  return 0;
}

int cmd_cv(const RunOpts& o) {
  auto config = load_run_config(o);
  auto schema = encoders::ClinicalSchema::default_schema();
  auto data = load_run_dataset(o.data_dir, config, schema);
  pipeline::run_nested_cv(data, schema, config, o.out_dir, o.parallelism, o.verbosity);
  return 0;
}

struct PredictOpts {
  std::string model_dir;
  std::string data_dir;
  std::string out_file;
};

int cmd_predict(const PredictOpts& o) {
  auto config = runconfig::load_config(o.model_dir + "/config.json");
  auto schema = encoders::ClinicalSchema::default_schema();
  auto data = load_run_dataset(o.data_dir, config, schema);
  auto predictions = pipeline::predict_run(o.model_dir, data, schema);
  dataio::write_predictions_csv(o.out_file, predictions);
  return 0;
}

struct EvaluateOpts {
  std::string predictions_file;
  std::string labels_file;
  std::string out_file;
  double binarize_months = 0.0;
};

int cmd_evaluate(const EvaluateOpts& o) {
  auto predictions = dataio::read_predictions_csv(o.predictions_file);
  auto labels = dataio::read_labels_csv(o.labels_file);
  pipeline::EvaluateOptions options;
  options.binarize_months = o.binarize_months;
  pipeline::evaluate_predictions(predictions, labels, o.out_file, options);
  return 0;
}

void add_seed_option(CLI::App* sub, SeedFlag& seed) {
  auto* opt = sub->add_option("--seed", seed.value, "pseudorandom seed (overrides PROFUSE_SEED)");
  sub->parse_complete_callback([opt, &seed]() { seed.given = opt->count() > 0; });
}

void add_run_options(CLI::App* sub, RunOpts& o, bool config_allowed = true) {
  if (config_allowed)
    sub->add_option("--config", o.config_path, "JSON run configuration")
        ->check(CLI::ExistingFile);
  sub->add_option("--data", o.data_dir, "cohort directory")->required()
      ->check(CLI::ExistingDirectory);
  sub->add_option("--out", o.out_dir, "output run directory")->required();
  add_seed_option(sub, o.seed);
  sub->add_option("--parallelism", o.parallelism,
                  "worker threads for fold jobs (default: one per fold)");
  sub->add_option("--verbosity", o.verbosity, "0 quiet, 1 per-epoch progress");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multi-modal survival regression pipeline (synthetic-data workflow)"};
  app.require_subcommand(1);

  SynthOpts synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a deterministic synthetic cohort");
  synth_cmd->add_option("--n", synth.config.n_subjects, "number of subjects")
      ->check(CLI::PositiveNumber);
  add_seed_option(synth_cmd, synth.seed);
  synth_cmd->add_option("--snr", synth.config.signal_to_noise, "embedding signal-to-noise");
  synth_cmd->add_option("--censoring", synth.config.censoring_rate_target,
                        "target censored fraction in [0,1)");
  synth_cmd->add_option("--out", synth.out_dir, "output cohort directory")->required();
  synth_cmd->add_option("--pathology-dim", synth.config.pathology_dim)
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--radiology-dim", synth.config.radiology_dim)
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--sparse-nnz", synth.config.radiology_sparse_nnz)
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise-band", synth.config.radiology_noise_band)
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--patches-min", synth.config.patches_min);
  synth_cmd->add_option("--patches-max", synth.config.patches_max);
  synth_cmd->add_option("--slices-min", synth.config.slices_min);
  synth_cmd->add_option("--slices-max", synth.config.slices_max);
  synth_cmd->add_option("--pathology-weight", synth.config.pathology_weight);
  synth_cmd->add_option("--radiology-weight", synth.config.radiology_weight);
  synth_cmd->add_option("--interaction", synth.config.interaction_weight,
                        "cross-modal clinical-pathology hazard term");
  synth_cmd->add_flag("--permute-labels", synth.permute_labels,
                      "shuffle labels to break all feature-outcome association");
  synth_cmd->add_option("--verbosity", synth.verbosity);

  RunOpts train;
  auto* train_cmd = app.add_subcommand("train", "cross-validated training run");
  add_run_options(train_cmd, train);

  RunOpts cv;
  auto* cv_cmd = app.add_subcommand("cv", "nested cross-validation with the aggregation grid");
  add_run_options(cv_cmd, cv);

  PredictOpts predict;
  auto* predict_cmd = app.add_subcommand("predict", "ensemble prediction from a run directory");
  predict_cmd->add_option("--model", predict.model_dir, "finished run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  predict_cmd->add_option("--data", predict.data_dir, "cohort directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  predict_cmd->add_option("--out", predict.out_file, "output predictions CSV")->required();

  EvaluateOpts evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against labels");
  evaluate_cmd->add_option("--predictions", evaluate.predictions_file)
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--labels", evaluate.labels_file)->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", evaluate.out_file, "output metrics JSON")->required();
  evaluate_cmd->add_option("--binarize-months", evaluate.binarize_months,
                           "also report ROC-AUC for recurrence within this horizon");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(synth_cmd)) return cmd_synth(synth);
    if (app.got_subcommand(train_cmd)) return cmd_train(train);
    if (app.got_subcommand(cv_cmd)) return cmd_cv(cv);
    if (app.got_subcommand(predict_cmd)) return cmd_predict(predict);
    if (app.got_subcommand(evaluate_cmd)) return cmd_evaluate(evaluate);
  } catch (const runconfig::ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("profuse");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace profuse::runner
