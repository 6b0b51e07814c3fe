#include "profuse/runconfig.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace profuse::runconfig {
namespace {

using nlohmann::ordered_json;

[[noreturn]] void bad_key(const std::string& section, const std::string& key) {
  throw ConfigError("unknown config key '" + key + "' in section '" + section + "'");
}

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& why) {
  throw ConfigError("invalid value for config key '" + section + "." + key + "': " + why);
}

int get_int(const ordered_json& v, const std::string& section, const std::string& key) {
  if (!v.is_number_integer()) bad_value(section, key, "expected an integer");
  return v.get<int>();
}

int get_positive_int(const ordered_json& v, const std::string& section, const std::string& key) {
  int i = get_int(v, section, key);
  if (i <= 0) bad_value(section, key, "must be positive");
  return i;
}

double get_number(const ordered_json& v, const std::string& section, const std::string& key) {
  if (!v.is_number()) bad_value(section, key, "expected a number");
  return v.get<double>();
}

bool get_bool(const ordered_json& v, const std::string& section, const std::string& key) {
  if (!v.is_boolean()) bad_value(section, key, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const ordered_json& v, const std::string& section, const std::string& key) {
  if (!v.is_string()) bad_value(section, key, "expected a string");
  return v.get<std::string>();
}

experiment::Optimizer get_optimizer(const ordered_json& v, const std::string& section,
                                    const std::string& key) {
  std::string name = get_string(v, section, key);
  try {
    return experiment::optimizer_from_string(name);
  } catch (const std::exception& e) {
    bad_value(section, key, e.what());
  }
}

fusion::AggMode get_agg(const ordered_json& v, const std::string& section,
                        const std::string& key) {
  std::string name = get_string(v, section, key);
  try {
    return fusion::agg_mode_from_string(name);
  } catch (const std::exception& e) {
    bad_value(section, key, e.what());
  }
}

void parse_model(const ordered_json& obj, ModelConfig& m) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "latent_dim") m.latent_dim = get_positive_int(value, "model", key);
    else if (key == "layers") m.layers = get_positive_int(value, "model", key);
    else if (key == "heads") m.heads = get_positive_int(value, "model", key);
    else if (key == "ffn_width") m.ffn_width = get_positive_int(value, "model", key);
    else if (key == "dropout") m.dropout = get_number(value, "model", key);
    else if (key == "top_k") m.top_k = get_int(value, "model", key);
    else if (key == "pooled_dim") m.pooled_dim = get_positive_int(value, "model", key);
    else if (key == "scorer_hidden") m.scorer_hidden = get_positive_int(value, "model", key);
    else if (key == "radiology_hidden")
      m.radiology_hidden = get_positive_int(value, "model", key);
    else bad_key("model", key);
  }
  if (m.dropout < 0.0 || m.dropout >= 1.0) bad_value("model", "dropout", "must be in [0, 1)");
  if (m.latent_dim % m.heads != 0)
    bad_value("model", "heads", "must divide latent_dim evenly");
}

void parse_training(const ordered_json& obj, TrainingConfig& t) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "optimizer") t.optimizer = get_optimizer(value, "training", key);
    else if (key == "learning_rate") t.learning_rate = get_number(value, "training", key);
    else if (key == "weight_decay") t.weight_decay = get_number(value, "training", key);
    else if (key == "max_epochs") t.max_epochs = get_positive_int(value, "training", key);
    else if (key == "min_epochs_before_stop")
      t.min_epochs_before_stop = get_int(value, "training", key);
    else if (key == "patience") t.patience = get_positive_int(value, "training", key);
    else if (key == "seed") {
      if (!value.is_number_integer() || value.get<long long>() < 0)
        bad_value("training", key, "expected a non-negative integer");
      t.seed = value.get<std::uint64_t>();
    } else if (key == "encoder_optimizer")
      t.encoder_optimizer = get_optimizer(value, "training", key);
    else if (key == "encoder_learning_rate")
      t.encoder_learning_rate = get_number(value, "training", key);
    else if (key == "encoder_weight_decay")
      t.encoder_weight_decay = get_number(value, "training", key);
    else bad_key("training", key);
  }
  if (t.learning_rate < 0.0) bad_value("training", "learning_rate", "must be >= 0");
  if (t.encoder_learning_rate < 0.0)
    bad_value("training", "encoder_learning_rate", "must be >= 0");
  if (t.weight_decay < 0.0) bad_value("training", "weight_decay", "must be >= 0");
  if (t.encoder_weight_decay < 0.0)
    bad_value("training", "encoder_weight_decay", "must be >= 0");
  if (t.min_epochs_before_stop < 0)
    bad_value("training", "min_epochs_before_stop", "must be >= 0");
}

void parse_cv(const ordered_json& obj, CvConfig& c) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "mode") {
      std::string mode = get_string(value, "cv", key);
      if (mode == "plain") c.mode = CvConfig::Mode::plain;
      else if (mode == "nested") c.mode = CvConfig::Mode::nested;
      else bad_value("cv", key, "expected 'plain' or 'nested'");
    } else if (key == "k") c.k = get_int(value, "cv", key);
    else if (key == "outer_k") c.outer_k = get_int(value, "cv", key);
    else if (key == "inner_k") c.inner_k = get_int(value, "cv", key);
    else if (key == "stratify_events") c.stratify_events = get_bool(value, "cv", key);
    else bad_key("cv", key);
  }
  if (c.k < 2) bad_value("cv", "k", "must be >= 2");
  if (c.outer_k < 2) bad_value("cv", "outer_k", "must be >= 2");
  if (c.inner_k < 2) bad_value("cv", "inner_k", "must be >= 2");
}

void parse_fusion(const ordered_json& obj, FusionRunConfig& f) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "mode") {
      std::string mode = get_string(value, "fusion", key);
      if (mode == "intermediate") f.mode = FusionRunConfig::Mode::intermediate;
      else if (mode == "late") f.mode = FusionRunConfig::Mode::late;
      else bad_value("fusion", key, "expected 'intermediate' or 'late'");
    } else if (key == "weight_agg") f.weight_agg = get_agg(value, "fusion", key);
    else if (key == "score_agg") f.score_agg = get_agg(value, "fusion", key);
    else if (key == "modality_combination") {
      std::string name = get_string(value, "fusion", key);
      try {
        f.modality_combination = fusion::combination_from_string(name);
      } catch (const std::exception& e) {
        bad_value("fusion", key, e.what());
      }
    } else if (key == "aggregate_pooling_weights")
      f.aggregate_pooling_weights = get_bool(value, "fusion", key);
    else bad_key("fusion", key);
  }
}

void parse_data(const ordered_json& obj, DataConfig& d) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "clinical_csv") d.clinical_csv = get_string(value, "data", key);
    else if (key == "labels_csv") d.labels_csv = get_string(value, "data", key);
    else if (key == "pathology_dir") d.pathology_dir = get_string(value, "data", key);
    else if (key == "radiology_dir") d.radiology_dir = get_string(value, "data", key);
    else if (key == "pathology_dim") d.pathology_dim = get_positive_int(value, "data", key);
    else if (key == "radiology_dim") d.radiology_dim = get_positive_int(value, "data", key);
    else bad_key("data", key);
  }
}

}  // namespace

std::string to_string(CvConfig::Mode mode) {
  return mode == CvConfig::Mode::plain ? "plain" : "nested";
}

std::string to_string(FusionRunConfig::Mode mode) {
  return mode == FusionRunConfig::Mode::intermediate ? "intermediate" : "late";
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse config " + origin + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config " + origin + " must be a JSON object");

  RunConfig config;
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object())
      throw ConfigError("config section '" + section + "' must be a JSON object");
    if (section == "model") parse_model(body, config.model);
    else if (section == "training") parse_training(body, config.training);
    else if (section == "cv") parse_cv(body, config.cv);
    else if (section == "fusion") parse_fusion(body, config.fusion);
    else if (section == "data") parse_data(body, config.data);
    else throw ConfigError("unknown config section '" + section + "'");
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

std::string render_config(const RunConfig& c) {
  ordered_json doc;
  doc["model"] = {{"latent_dim", c.model.latent_dim},
                  {"layers", c.model.layers},
                  {"heads", c.model.heads},
                  {"ffn_width", c.model.ffn_width},
                  {"dropout", c.model.dropout},
                  {"top_k", c.model.top_k},
                  {"pooled_dim", c.model.pooled_dim},
                  {"scorer_hidden", c.model.scorer_hidden},
                  {"radiology_hidden", c.model.radiology_hidden}};
  doc["training"] = {{"optimizer", experiment::to_string(c.training.optimizer)},
                     {"learning_rate", c.training.learning_rate},
                     {"weight_decay", c.training.weight_decay},
                     {"max_epochs", c.training.max_epochs},
                     {"min_epochs_before_stop", c.training.min_epochs_before_stop},
                     {"patience", c.training.patience},
                     {"seed", c.training.seed},
                     {"encoder_optimizer", experiment::to_string(c.training.encoder_optimizer)},
                     {"encoder_learning_rate", c.training.encoder_learning_rate},
                     {"encoder_weight_decay", c.training.encoder_weight_decay}};
  doc["cv"] = {{"mode", to_string(c.cv.mode)},
               {"k", c.cv.k},
               {"outer_k", c.cv.outer_k},
               {"inner_k", c.cv.inner_k},
               {"stratify_events", c.cv.stratify_events}};
  doc["fusion"] = {{"mode", to_string(c.fusion.mode)},
                   {"weight_agg", fusion::to_string(c.fusion.weight_agg)},
                   {"score_agg", fusion::to_string(c.fusion.score_agg)},
                   {"modality_combination", fusion::to_string(c.fusion.modality_combination)},
                   {"aggregate_pooling_weights", c.fusion.aggregate_pooling_weights}};
  doc["data"] = {{"clinical_csv", c.data.clinical_csv},
                 {"labels_csv", c.data.labels_csv},
                 {"pathology_dir", c.data.pathology_dir},
                 {"radiology_dir", c.data.radiology_dir},
                 {"pathology_dim", c.data.pathology_dim},
                 {"radiology_dim", c.data.radiology_dim}};
  return doc.dump(2) + "\n";
}

}  // namespace profuse::runconfig
