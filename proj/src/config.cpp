#include "chartnet/config.hpp"

#include <fstream>

#include "chartnet/error.hpp"

namespace chartnet {

namespace {

using nlohmann::json;

// Model sizes taken from the vocabulary are not user keys.
bool derived_model_key(const std::string& k) { return k == "question_vocab" || k == "answer_vocab"; }

json defaults() { return ExperimentConfig{}.to_json(); }

// Copies src onto dst key by key; every key in src must already exist in dst.
void merge_strict(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw Error(ErrorCode::InvalidConfig, "'" + prefix + "' must be an object");
  for (const auto& [k, v] : src.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!dst.contains(k)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + path + "'");
    if (dst[k].is_object())
      merge_strict(dst[k], v, path);
    else
      dst[k] = v;
  }
}

void flatten(const json& j, const std::string& prefix, std::vector<ConfigKey>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object())
      flatten(v, path, out);
    else
      out.push_back({path, v.dump()});
  }
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  try {
    c.chart_type = chart_type_from_string(j.at("chart_type").get<std::string>());
    c.train_charts = j.at("train_charts").get<int>();
    c.val_charts = j.at("val_charts").get<int>();
    c.test_charts = j.at("test_charts").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.render_resolution = j.at("render_resolution").get<int>();
    c.constraints.min_elements = j.at("min_elements").get<int>();
    c.constraints.max_elements = j.at("max_elements").get<int>();
    c.constraints.min_height = j.at("min_height").get<double>();
    c.constraints.height_epsilon = j.at("height_epsilon").get<double>();
    c.constraints.angle_epsilon = j.at("angle_epsilon").get<double>();
    c.constraints.min_sector_angle = j.at("min_sector_angle").get<double>();
    c.min_class_count = j.at("min_class_count").get<int>();
    c.balance_check_min_charts = j.at("balance_check_min_charts").get<int>();
    c.root = j.at("root").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("dataset config: ") + e.what());
  }
  if (c.train_charts < 1 || c.val_charts < 0 || c.test_charts < 0)
    throw Error(ErrorCode::InvalidConfig, "dataset split sizes must be positive");
  return c;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json d = dataset.to_json();
  d["root"] = dataset.root.string();
  json m = model.to_json();
  m.erase("question_vocab");
  m.erase("answer_vocab");
  return {{"dataset", d},
          {"model", m},
          {"train", train.to_json()},
          {"eval", {{"split", to_string(eval_split)}}},
          {"run_dir", run_dir.string()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  json doc = defaults();
  merge_strict(doc, j, "");
  ExperimentConfig c;
  c.dataset = dataset_config_from_json(doc.at("dataset"));
  json m = doc.at("model");
  m["question_vocab"] = 0;
  m["answer_vocab"] = 0;
  c.model = ModelConfig::from_json(m);
  c.train = Hyperparameters::from_json(doc.at("train"));
  try {
    c.eval_split = split_from_string(doc.at("eval").at("split").get<std::string>());
    c.run_dir = doc.at("run_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return c;
}

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> keys;
  flatten(defaults(), "", keys);
  return keys;
}

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  // Locate the key in the defaults to learn its type.
  const json reference = defaults();
  const json* ref = &reference;
  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!ref->is_object() || !ref->contains(part) || derived_model_key(part))
      throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    ref = &(*ref)[part];
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (ref->is_object()) throw Error(ErrorCode::InvalidConfig, "'" + key + "' is a section, not a key");
  if (ref->is_string()) {
    *node = text;
    return;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) throw Error(ErrorCode::InvalidConfig, "cannot parse value of '" + key + "': " + text);
  if (ref->is_number_integer() && value.is_number_float())
    throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects an integer, got " + text);
  const bool numeric = ref->is_number() && value.is_number();
  if (!numeric && ref->type() != value.type())
    throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects " + ref->type_name() + ", got " + text);
  *node = value;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read config " + path->string());
    doc = json::parse(in, nullptr, false, true);
    if (doc.is_discarded()) throw Error(ErrorCode::InvalidConfig, path->string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return ExperimentConfig::from_json(doc);
}

}  // namespace chartnet
