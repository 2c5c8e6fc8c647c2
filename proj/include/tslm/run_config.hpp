#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "tslm/data.hpp"
#include "tslm/encoder.hpp"
#include "tslm/numcore/optim.hpp"

namespace tslm {

/// Settings shared by the CLI commands. Loaded from JSON; unknown keys are rejected.
struct RunConfig {
  std::string command;
  std::string train_data;
  std::string dev_data;
  std::string test_data;
  std::string data_format = "propara";  // propara | npn
  EncoderConfig encoder;
  SgdConfig sgd;
  std::size_t epochs = 10;
  std::uint64_t seed = 13;
  std::string checkpoint;
  std::string predictions;
  std::string metrics;
  std::string train_log;
  bool no_constraints = false;
  bool no_np_filter = false;
  bool zero_timestamp = false;
  // generate-data
  std::size_t synthetic_count = 10;
  GrammarConfig grammar;

  void validate() const {
    static const std::set<std::string> commands{"train", "predict", "evaluate", "generate-data", "convert", ""};
    if (!commands.count(command)) throw ConfigError("config: unknown command '" + command + "'");
    if (data_format != "propara" && data_format != "npn") {
      throw ConfigError("config: data_format must be 'propara' or 'npn'");
    }
    encoder.validate_architecture();
    sgd.validate();
    if (epochs == 0) throw ConfigError("config: epochs must be positive");
    grammar.validate();
    if (command == "train") {
      if (train_data.empty()) throw ConfigError("config: train needs train_data");
      if (checkpoint.empty()) throw ConfigError("config: train needs checkpoint");
    }
    if (command == "predict") {
      if (test_data.empty()) throw ConfigError("config: predict needs test_data");
      if (checkpoint.empty()) throw ConfigError("config: predict needs checkpoint");
      if (predictions.empty()) throw ConfigError("config: predict needs predictions");
    }
  }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"command", "train_data", "dev_data", "test_data", "data_format", "encoder", "sgd", "epochs",
                          "seed", "checkpoint", "predictions", "metrics", "train_log", "no_constraints",
                          "no_np_filter", "zero_timestamp", "synthetic_count", "grammar"},
                         "config");
  RunConfig c;
  detail::read_field(j, "command", c.command, "config");
  detail::read_field(j, "train_data", c.train_data, "config");
  detail::read_field(j, "dev_data", c.dev_data, "config");
  detail::read_field(j, "test_data", c.test_data, "config");
  detail::read_field(j, "data_format", c.data_format, "config");
  detail::read_field(j, "epochs", c.epochs, "config");
  detail::read_field(j, "seed", c.seed, "config");
  detail::read_field(j, "checkpoint", c.checkpoint, "config");
  detail::read_field(j, "predictions", c.predictions, "config");
  detail::read_field(j, "metrics", c.metrics, "config");
  detail::read_field(j, "train_log", c.train_log, "config");
  detail::read_field(j, "no_constraints", c.no_constraints, "config");
  detail::read_field(j, "no_np_filter", c.no_np_filter, "config");
  detail::read_field(j, "zero_timestamp", c.zero_timestamp, "config");
  detail::read_field(j, "synthetic_count", c.synthetic_count, "config");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::reject_unknown(e,
                           {"d_model", "n_heads", "n_layers", "ff_width", "max_length", "dropout",
                            "embedding_init_std"},
                           "config.encoder");
    detail::read_field(e, "d_model", c.encoder.d_model, "config.encoder");
    detail::read_field(e, "n_heads", c.encoder.n_heads, "config.encoder");
    detail::read_field(e, "n_layers", c.encoder.n_layers, "config.encoder");
    detail::read_field(e, "ff_width", c.encoder.ff_width, "config.encoder");
    detail::read_field(e, "max_length", c.encoder.max_length, "config.encoder");
    detail::read_field(e, "dropout", c.encoder.dropout, "config.encoder");
    detail::read_field(e, "embedding_init_std", c.encoder.embedding_init_std, "config.encoder");
  }
  if (j.contains("sgd")) {
    const auto& s = j.at("sgd");
    detail::reject_unknown(s, {"learning_rate", "decay_factor", "decay_every"}, "config.sgd");
    detail::read_field(s, "learning_rate", c.sgd.learning_rate, "config.sgd");
    detail::read_field(s, "decay_factor", c.sgd.decay_factor, "config.sgd");
    detail::read_field(s, "decay_every", c.sgd.decay_every, "config.sgd");
  }
  if (j.contains("grammar")) {
    const auto& g = j.at("grammar");
    detail::reject_unknown(g, {"min_steps", "max_steps", "min_entities", "max_entities", "entity_pool", "location_pool"},
                           "config.grammar");
    try {
      c.grammar = g.get<GrammarConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config.grammar: ") + e.what());
    }
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tslm
