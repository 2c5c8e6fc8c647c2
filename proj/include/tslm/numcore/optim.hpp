#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/numcore/autodiff.hpp"

namespace tslm {

struct SgdConfig {
  double learning_rate = 3e-4;
  double decay_factor = 0.5;
  std::int64_t decay_every = 50;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("sgd: learning_rate must be positive");
    }
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("sgd: decay_factor must lie in (0, 1]");
    if (decay_every <= 0) throw ConfigError("sgd: decay_every must be positive");
  }
};

/// learning_rate * decay_factor ^ floor(step / decay_every)
inline double effective_learning_rate(const SgdConfig& config, std::int64_t step_count) {
  const auto halvings = static_cast<double>(step_count / config.decay_every);
  return config.learning_rate * std::pow(config.decay_factor, halvings);
}

/// Named trainable tensors, iterated in name order.
class ParamStore {
 public:
  Var& add(const std::string& name, Tensor init, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, Var(std::move(init), trainable));
    if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
    return it->second;
  }

  Var& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Var& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Var>& items() { return params_; }
  const std::map<std::string, Var>& items() const { return params_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value().size();
    return n;
  }

 private:
  std::map<std::string, Var> params_;
};

/// One SGD update p <- p - lr(step_count) * g over every trainable parameter,
/// then zeroes gradients. Parameters without a gradient are left untouched.
inline void sgd_step(ParamStore& params, const SgdConfig& config, std::int64_t step_count) {
  for (auto& [name, p] : params.items()) {
    if (!p.has_grad()) continue;
    if (!p.grad()->all_finite()) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  const double lr = effective_learning_rate(config, step_count);
  for (auto& [name, p] : params.items()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    p.mutable_value().mat() -= lr * p.grad()->mat();
  }
  params.zero_grad();
}

/// Stateful wrapper that counts optimizer steps.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config, std::int64_t start_step = 0) : config_(config), step_(start_step) {
    config_.validate();
  }

  void step(ParamStore& params) {
    sgd_step(params, config_, step_);
    ++step_;
  }

  double current_learning_rate() const { return effective_learning_rate(config_, step_); }
  std::int64_t step_count() const { return step_; }
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::int64_t step_;
};

// ---------------------------------------------------------------------------
// Checkpoint serialisation: {"name": {"shape": [...], "data": [...]}, ...}.
// nlohmann/json prints doubles with max_digits10, so values round-trip exactly.

inline nlohmann::json params_to_json(const ParamStore& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, p] : params.items()) {
    out[name] = {{"shape", p.value().shape()}, {"data", p.value().data()}};
  }
  return out;
}

/// Overwrites values of `params` from json; names and shapes must match exactly.
inline void params_from_json(ParamStore& params, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("checkpoint: parameter block must be an object");
  for (const auto& [name, p] : params.items()) {
    if (!j.contains(name)) throw DataError("checkpoint: missing parameter '" + name + "'");
  }
  for (const auto& [name, entry] : j.items()) {
    if (!params.contains(name)) throw DataError("checkpoint: unexpected parameter '" + name + "'");
    Shape shape;
    std::vector<double> data;
    try {
      shape = entry.at("shape").get<Shape>();
      data = entry.at("data").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint: parameter '" + name + "': " + e.what());
    }
    Var& p = params.at(name);
    if (shape != p.value().shape()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(p.value().shape()));
    }
    p.mutable_value() = Tensor(std::move(shape), std::move(data));
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << j.dump(1) << '\n';
  if (!os) throw DataError("failed writing '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace tslm
