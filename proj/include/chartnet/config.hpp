#pragma once

// Experiment configuration: one JSON document with dataset, model, train and
// eval sections. Files may set any subset of the documented keys; anything
// else is rejected. Overrides address keys by dotted path.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chartnet/dataset.hpp"
#include "chartnet/model.hpp"
#include "chartnet/train.hpp"
#include "json.hpp"

namespace chartnet {

struct ExperimentConfig {
  DatasetConfig dataset;
  // question_vocab and answer_vocab are filled in from the dataset vocabulary.
  ModelConfig model;
  Hyperparameters train;
  Split eval_split = Split::Test;
  std::filesystem::path run_dir = "runs/default";

  nlohmann::json to_json() const;
  // Keys missing from j keep their defaults; unknown keys are InvalidConfig.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct ConfigKey {
  std::string key;            // dotted path, e.g. "train.learning_rate"
  std::string default_value;  // JSON text of the default
};

// Every documented key with its default, in document order.
std::vector<ConfigKey> config_keys();

// Applies "key=value" to a config document. The value is parsed as JSON
// unless the key holds a string, in which case it is taken verbatim.
void apply_override(nlohmann::json& document, const std::string& assignment);

// Defaults, then the file (if any), then the overrides in order.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {});

}  // namespace chartnet
