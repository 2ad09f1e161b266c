#pragma once

// Losses, metrics, optimisation, checkpoints, and the train / evaluate loops.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "chartnet/dataset.hpp"
#include "chartnet/model.hpp"
#include "json.hpp"

namespace chartnet {

enum class TrainSubset { All, Generic, ChartSpecific };
std::string_view to_string(TrainSubset s);
TrainSubset train_subset_from_string(std::string_view s);

struct Hyperparameters {
  int batch_size = 128;
  double learning_rate = 1e-5;
  int epochs = 25;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  // Which questions enter the loss. Baselines always train on generic ones.
  TrainSubset train_subset = TrainSubset::All;
  // Evaluate on the validation split every epoch; off for overfit fixtures.
  bool validate = true;
  double iou_threshold = 0.8;

  nlohmann::json to_json() const;
  static Hyperparameters from_json(const nlohmann::json& j);
};

// Target of one question as the loss sees it.
struct Target {
  AnswerKind kind = AnswerKind::Generic;
  int class_id = -1;
  NormBBox box;
};

// Cross-entropy over logits for generic targets, mean squared error over the
// four coordinates for chart-specific ones. output_kind says which head
// produced the output; a mismatch with the target kind is KindMismatch.
template <class T>
nn::Var<T> compute_loss(nn::Var<T> output, AnswerKind output_kind, const Target& target);

struct TemplateScore {
  int count = 0;
  int correct = 0;  // generic: exact class; chart-specific: IoU >= threshold
  double iou_sum = 0.0;
  bool chart_specific = false;
};

struct Metrics {
  int generic_count = 0;
  int generic_correct = 0;
  double generic_accuracy = 0.0;
  int chart_specific_count = 0;
  double mean_iou = 0.0;
  double acc_at_iou = 0.0;
  double iou_threshold = 0.8;
  int repaired_boxes = 0;
  double loss = 0.0;  // mean per-question loss when computed
  std::map<std::string, TemplateScore> per_template;

  nlohmann::json to_json() const;
};

struct Prediction {
  AnswerKind kind = AnswerKind::Generic;
  int class_id = -1;
  std::vector<double> distribution;
  std::array<double, 4> raw_box{};  // regressor output before decoding
};

// Accumulates predictions into Metrics; ordering of add calls does not matter.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double iou_threshold = 0.8) : threshold_(iou_threshold) {}
  void add(const std::string& template_id, const Prediction& prediction, const Target& target, double loss = 0.0);
  Metrics finish() const;

 private:
  double threshold_;
  Metrics m_;
  double iou_sum_ = 0.0;
  int iou_hits_ = 0;
  double loss_sum_ = 0.0;
  int loss_count_ = 0;
};

// Backbone input for one chart: the downscaled image for the desk backbone,
// or precomputed feature maps read from <root>/<type>/features/<chart_id>.f32
// (raw float32, channel-major) for the pretrained adapter.
nn::Tensor<float> model_input(const ModelConfig& config, const ExampleSource& source, const ChartRecord& record);

// Anything that answers questions about dataset charts.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual bool answers_chart_specific() const = 0;
  // Predictions for the given question indices of one chart.
  virtual std::vector<Prediction> predict(const ChartRecord& record, const std::vector<int>& qa_indices) = 0;
};

// Runs a model over cached dataset images; each chart image is encoded once.
class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const Model<float>& model, const ExampleSource& source);
  bool answers_chart_specific() const override { return model_.has_box_head(); }
  std::vector<Prediction> predict(const ChartRecord& record, const std::vector<int>& qa_indices) override;

 private:
  const Model<float>& model_;
  const ExampleSource& source_;
};

Target target_of(const ModelExample& e);

// Metrics over one split. Chart-specific questions are scored only when the
// predictor answers them. Generic answers never seen in train count as wrong.
Metrics evaluate(Predictor& predictor, const DatasetManifest& manifest, const Vocab& vocab, Split split,
                 double iou_threshold = 0.8);

// Adam over every trainable parameter of a store.
class Adam {
 public:
  Adam(nn::ParameterStore<float>& params, const Hyperparameters& h);
  // Applies one step from the accumulated gradients, then clears them.
  void step();
  long steps() const { return t_; }

 private:
  nn::ParameterStore<float>& params_;
  Hyperparameters h_;
  std::vector<nn::Tensor<float>> m_, v_;
  long t_ = 0;
};

// One trainable (chart, question) pair.
struct ExampleRef {
  const ChartRecord* record = nullptr;
  int qa_index = 0;
};

// Training examples of a split, filtered by kind and the model's heads.
std::vector<ExampleRef> training_examples(const DatasetManifest& manifest, Split split, const Model<float>& model,
                                          TrainSubset subset);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // on the examples seen this epoch, before the update
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_mean_iou = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  Metrics best_val;
};

struct TrainOptions {
  Hyperparameters hyper;
  // Restricts training to these examples instead of the whole train split.
  std::vector<ExampleRef> examples;
  std::function<void(const EpochRecord&)> on_epoch;
  // Stops early once this returns true (used by overfit fixtures).
  std::function<bool(const EpochRecord&)> stop;
};

// Minibatch Adam training. Examples are shuffled at chart granularity and a
// batch holds whole charts, so each image passes through the backbone once
// per batch; the loss is the mean over the batch's questions. With
// validation on, the model is left holding the parameters of the epoch with
// the best validation accuracy (ties broken by mean IoU).
TrainResult train(Model<float>& model, const ExampleSource& source, const TrainOptions& options);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

// Checkpoint container: magic line, JSON header (format version, model
// config, vocab hash, parameter table, free-form metadata), raw float32 data.
struct CheckpointInfo {
  ModelConfig config;
  std::string vocab_hash;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& vocab_hash,
                     const nlohmann::json& metadata = nlohmann::json::object());
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
// Throws VocabMismatch when expected_vocab_hash is non-empty and differs.
std::unique_ptr<Model<float>> load_checkpoint(const std::filesystem::path& path,
                                              const std::string& expected_vocab_hash = "",
                                              CheckpointInfo* info = nullptr);

}  // namespace chartnet
