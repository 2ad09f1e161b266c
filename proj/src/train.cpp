#include "chartnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "chartnet/error.hpp"
#include "chartnet/simd/kernels.hpp"

namespace chartnet {

using namespace nn;

std::string_view to_string(TrainSubset s) {
  switch (s) {
    case TrainSubset::All: return "all";
    case TrainSubset::Generic: return "generic";
    case TrainSubset::ChartSpecific: return "chart_specific";
  }
  return "?";
}

TrainSubset train_subset_from_string(std::string_view s) {
  for (auto v : {TrainSubset::All, TrainSubset::Generic, TrainSubset::ChartSpecific})
    if (to_string(v) == s) return v;
  throw Error(ErrorCode::InvalidConfig, "unknown train_subset '" + std::string(s) + "'");
}

nlohmann::json Hyperparameters::to_json() const {
  return {{"batch_size", batch_size},   {"learning_rate", learning_rate},
          {"epochs", epochs},           {"seed", seed},
          {"beta1", beta1},             {"beta2", beta2},
          {"adam_epsilon", adam_epsilon}, {"clip_norm", clip_norm},
          {"train_subset", to_string(train_subset)}, {"validate", validate},
          {"iou_threshold", iou_threshold}};
}

Hyperparameters Hyperparameters::from_json(const nlohmann::json& j) {
  Hyperparameters h;
  try {
    h.batch_size = j.at("batch_size").get<int>();
    h.learning_rate = j.at("learning_rate").get<double>();
    h.epochs = j.at("epochs").get<int>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.beta1 = j.at("beta1").get<double>();
    h.beta2 = j.at("beta2").get<double>();
    h.adam_epsilon = j.at("adam_epsilon").get<double>();
    h.clip_norm = j.at("clip_norm").get<double>();
    h.train_subset = train_subset_from_string(j.at("train_subset").get<std::string>());
    h.validate = j.at("validate").get<bool>();
    h.iou_threshold = j.at("iou_threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("train config: ") + e.what());
  }
  if (h.batch_size < 1 || !(h.learning_rate > 0) || h.epochs < 1 || h.clip_norm < 0)
    throw Error(ErrorCode::InvalidConfig, "batch_size, learning_rate and epochs must be positive");
  return h;
}

// ---------------------------------------------------------------------------
// Loss and metrics

template <class T>
Var<T> compute_loss(Var<T> output, AnswerKind output_kind, const Target& target) {
  if (output_kind != target.kind) throw Error(ErrorCode::KindMismatch, "prediction and target kinds differ");
  if (target.kind == AnswerKind::Generic) return softmax_cross_entropy(output, target.class_id);
  const auto a = target.box.as_array();
  return mse(output, Tensor<T>::row({static_cast<T>(a[0]), static_cast<T>(a[1]), static_cast<T>(a[2]),
                                     static_cast<T>(a[3])}));
}

template Var<float> compute_loss(Var<float>, AnswerKind, const Target&);
template Var<double> compute_loss(Var<double>, AnswerKind, const Target&);

namespace {

double prediction_loss(const Prediction& p, const Target& t) {
  if (t.kind == AnswerKind::Generic) {
    if (t.class_id < 0 || t.class_id >= static_cast<int>(p.distribution.size())) return 0.0;
    return -std::log(std::max(p.distribution[static_cast<std::size_t>(t.class_id)], 1e-300));
  }
  const auto a = t.box.as_array();
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += (p.raw_box[i] - a[i]) * (p.raw_box[i] - a[i]);
  return s / 4.0;
}

}  // namespace

void MetricsAccumulator::add(const std::string& template_id, const Prediction& prediction, const Target& target,
                             double loss) {
  if (prediction.kind != target.kind) throw Error(ErrorCode::KindMismatch, "prediction and target kinds differ");
  auto& ts = m_.per_template[template_id];
  ++ts.count;
  if (target.kind == AnswerKind::Generic) {
    ++m_.generic_count;
    const bool ok = target.class_id >= 0 && prediction.class_id == target.class_id;
    if (ok) {
      ++m_.generic_correct;
      ++ts.correct;
    }
  } else {
    ts.chart_specific = true;
    ++m_.chart_specific_count;
    bool repaired = false;
    const NormBBox box = decode_box(prediction.raw_box, &repaired);
    if (repaired) ++m_.repaired_boxes;
    // A collapsed prediction has no area and overlaps nothing.
    const double v = box.area() > 0.0 ? iou(box, target.box) : 0.0;
    iou_sum_ += v;
    ts.iou_sum += v;
    if (v >= threshold_) {
      ++iou_hits_;
      ++ts.correct;
    }
  }
  loss_sum_ += loss != 0.0 ? loss : prediction_loss(prediction, target);
  ++loss_count_;
}

Metrics MetricsAccumulator::finish() const {
  Metrics m = m_;
  m.iou_threshold = threshold_;
  m.generic_accuracy = m.generic_count > 0 ? static_cast<double>(m.generic_correct) / m.generic_count : 0.0;
  m.mean_iou = m.chart_specific_count > 0 ? iou_sum_ / m.chart_specific_count : 0.0;
  m.acc_at_iou = m.chart_specific_count > 0 ? static_cast<double>(iou_hits_) / m.chart_specific_count : 0.0;
  m.loss = loss_count_ > 0 ? loss_sum_ / loss_count_ : 0.0;
  return m;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, s] : per_template) {
    nlohmann::json e = {{"count", s.count}, {"correct", s.correct},
                        {"accuracy", s.count > 0 ? static_cast<double>(s.correct) / s.count : 0.0}};
    if (s.chart_specific)
      e["mean_iou"] = s.count > 0 ? s.iou_sum / s.count : 0.0;
    per[id] = e;
  }
  return {{"generic_accuracy", generic_accuracy},
          {"generic_count", generic_count},
          {"generic_correct", generic_correct},
          {"chart_specific_count", chart_specific_count},
          {"mean_iou", mean_iou},
          {"acc_at_iou", acc_at_iou},
          {"iou_threshold", iou_threshold},
          {"repaired_boxes", repaired_boxes},
          {"loss", loss},
          {"per_template", per}};
}

// ---------------------------------------------------------------------------
// Prediction

Tensor<float> model_input(const ModelConfig& config, const ExampleSource& source, const ChartRecord& record) {
  if (config.backbone == BackboneKind::Desk) {
    if (source.input_resolution() != config.input_resolution)
      throw Error(ErrorCode::ShapeMismatch, "example source resolution differs from the model input resolution");
    const int r = config.input_resolution;
    return Tensor<float>({3, r, r}, source.image_tensor(record));
  }
  const auto path = type_dir(source.manifest().root, source.manifest().chart_type) / "features" / (record.chart_id + ".f32");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingImage, "no adapter features at " + path.string());
  const int c = config.adapter_channels, s = config.adapter_side;
  Tensor<float> t({c, s, s});
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float)) || in.peek() != EOF)
    throw Error(ErrorCode::ShapeMismatch, path.string() + " does not hold " + std::to_string(c) + "x" +
                                              std::to_string(s) + "x" + std::to_string(s) + " floats");
  return t;
}

namespace {

Prediction to_prediction(const Var<float>& out, AnswerKind kind) {
  Prediction p;
  p.kind = kind;
  const auto& v = out.value().storage();
  if (kind == AnswerKind::Generic) {
    const float mx = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (float x : v) total += std::exp(static_cast<double>(x - mx));
    for (float x : v) p.distribution.push_back(std::exp(static_cast<double>(x - mx)) / total);
    p.class_id = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  } else {
    for (int i = 0; i < 4; ++i) p.raw_box[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
  }
  return p;
}

}  // namespace

ModelPredictor::ModelPredictor(const Model<float>& model, const ExampleSource& source)
    : model_(model), source_(source) {}

std::vector<Prediction> ModelPredictor::predict(const ChartRecord& record, const std::vector<int>& qa_indices) {
  Graph<float> g;
  NoGradScope<float> no_grad(g);
  ImageEncoding<float> enc;
  if (model_.uses_image()) enc = model_.encode_image(g, model_input(model_.config(), source_, record));
  std::vector<Prediction> out;
  for (int i : qa_indices) {
    const ModelExample ex = source_.example(record, i, false);
    out.push_back(to_prediction(model_.forward(g, enc, ex.token_ids, ex.kind), ex.kind));
  }
  return out;
}

Target target_of(const ModelExample& e) { return {e.kind, e.class_id, e.box}; }

Metrics evaluate(Predictor& predictor, const DatasetManifest& manifest, const Vocab& vocab, Split split,
                 double iou_threshold) {
  ExampleSource source(manifest, vocab);
  MetricsAccumulator acc(iou_threshold);
  for (const ChartRecord* rec : manifest.split(split)) {
    std::vector<int> indices;
    for (std::size_t i = 0; i < rec->qa_pairs.size(); ++i)
      if (rec->qa_pairs[i].answer.kind == AnswerKind::Generic || predictor.answers_chart_specific())
        indices.push_back(static_cast<int>(i));
    if (indices.empty()) continue;
    const auto preds = predictor.predict(*rec, indices);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const ModelExample ex = source.example(*rec, indices[k], false);
      acc.add(ex.template_id, preds[k], target_of(ex));
    }
  }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Optimiser

Adam::Adam(ParameterStore<float>& params, const Hyperparameters& h) : params_(params), h_(h) {
  for (auto* p : params_.all()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const auto all = params_.all();
  float scale = 1.0f;
  if (h_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto* p : all)
      if (p->trainable && !p->grad.empty())
        for (float g : p->grad.storage()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > h_.clip_norm) scale = static_cast<float>(h_.clip_norm / norm);
  }
  const float bias1 = static_cast<float>(1.0 - std::pow(h_.beta1, static_cast<double>(t_)));
  const float bias2 = static_cast<float>(1.0 - std::pow(h_.beta2, static_cast<double>(t_)));
  const auto& k = simd::kernels<float>();
  for (std::size_t i = 0; i < all.size(); ++i) {
    Parameter<float>& p = *all[i];
    if (!p.trainable || p.grad.empty()) continue;
    if (scale != 1.0f)
      for (float& g : p.grad.storage()) g *= scale;
    k.adam_step(p.value.data(), p.grad.data(), m_[i].data(), v_[i].data(), p.value.size(),
                static_cast<float>(h_.learning_rate), static_cast<float>(h_.beta1), static_cast<float>(h_.beta2),
                static_cast<float>(h_.adam_epsilon), bias1, bias2);
  }
  params_.zero_grad();
}

// ---------------------------------------------------------------------------
// Training

std::vector<ExampleRef> training_examples(const DatasetManifest& manifest, Split split, const Model<float>& model,
                                          TrainSubset subset) {
  std::vector<ExampleRef> out;
  for (const ChartRecord* rec : manifest.split(split))
    for (std::size_t i = 0; i < rec->qa_pairs.size(); ++i) {
      const AnswerKind kind = rec->qa_pairs[i].answer.kind;
      if (kind == AnswerKind::ChartSpecific && (!model.has_box_head() || subset == TrainSubset::Generic)) continue;
      if (kind == AnswerKind::Generic && subset == TrainSubset::ChartSpecific) continue;
      out.push_back({rec, static_cast<int>(i)});
    }
  return out;
}

namespace {

struct ChartGroup {
  const ChartRecord* record;
  std::vector<int> qa;
};

std::vector<ChartGroup> group_by_chart(const std::vector<ExampleRef>& examples) {
  std::vector<ChartGroup> groups;
  std::unordered_map<const ChartRecord*, std::size_t> at;
  for (const auto& e : examples) {
    auto [it, fresh] = at.emplace(e.record, groups.size());
    if (fresh) groups.push_back({e.record, {}});
    groups[it->second].qa.push_back(e.qa_index);
  }
  return groups;
}

std::vector<std::vector<float>> snapshot(const ParameterStore<float>& store) {
  std::vector<std::vector<float>> s;
  for (const auto* p : store.all()) s.push_back(p->value.storage());
  return s;
}

void restore(ParameterStore<float>& store, const std::vector<std::vector<float>>& s) {
  const auto all = store.all();
  for (std::size_t i = 0; i < all.size(); ++i) all[i]->value.storage() = s[i];
}

bool correct(const Prediction& p, const Target& t, double threshold) {
  if (t.kind == AnswerKind::Generic) return p.class_id == t.class_id;
  const NormBBox b = decode_box(p.raw_box);
  return b.area() > 0.0 && iou(b, t.box) >= threshold;
}

}  // namespace

TrainResult train(Model<float>& model, const ExampleSource& source, const TrainOptions& options) {
  const Hyperparameters& h = options.hyper;
  TrainSubset subset = h.train_subset;
  std::vector<ExampleRef> examples = options.examples;
  if (examples.empty()) examples = training_examples(source.manifest(), Split::Train, model, subset);
  if (examples.empty()) throw Error(ErrorCode::PreconditionViolation, "no training examples");

  // Resolve targets up front; unknown generic answers cannot be trained on.
  const auto groups = group_by_chart(examples);
  std::vector<std::vector<ModelExample>> prepared(groups.size());
  for (std::size_t c = 0; c < groups.size(); ++c)
    for (int i : groups[c].qa) {
      ModelExample ex = source.example(*groups[c].record, i, false);
      if (ex.kind == AnswerKind::Generic && ex.class_id < 0)
        throw Error(ErrorCode::VocabMismatch, groups[c].record->chart_id + " answer missing from the vocabulary");
      if (ex.kind == AnswerKind::ChartSpecific && !model.has_box_head())
        throw Error(ErrorCode::KindMismatch, "model has no box head");
      prepared[c].push_back(std::move(ex));
    }

  Adam adam(model.params(), h);
  model.params().zero_grad();
  Rng rng(derive_seed(h.seed, 0x7472, 0));
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::vector<std::vector<float>> best;
  bool have_best = false;
  ModelPredictor predictor(model, source);

  for (int epoch = 1; epoch <= h.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    int seen = 0, right = 0;
    std::size_t next = 0;
    long batch_id = 0;
    while (next < order.size()) {
      // Whole charts until the batch reaches batch_size questions.
      std::vector<std::size_t> batch;
      int n = 0;
      while (next < order.size() && (batch.empty() || n < h.batch_size)) {
        batch.push_back(order[next]);
        n += static_cast<int>(prepared[order[next]].size());
        ++next;
      }
      for (std::size_t c : batch) {
        Graph<float> g;
        ImageEncoding<float> enc;
        if (model.uses_image()) enc = model.encode_image(g, model_input(model.config(), source, *groups[c].record));
        std::vector<Var<float>> losses;
        for (const ModelExample& ex : prepared[c]) {
          Var<float> out = model.forward(g, enc, ex.token_ids, ex.kind);
          const Target t = target_of(ex);
          if (correct(to_prediction(out, ex.kind), t, h.iou_threshold)) ++right;
          losses.push_back(compute_loss(out, ex.kind, t));
        }
        Var<float> total = scale(add_all(losses), 1.0f / static_cast<float>(n));
        const float value = total.value()[0];
        if (!std::isfinite(value))
          throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " +
                                                    std::to_string(batch_id) + ", chart " + groups[c].record->chart_id);
        loss_sum += static_cast<double>(value) * n;
        seen += static_cast<int>(prepared[c].size());
        g.backward(total);
      }
      adam.step();
      ++batch_id;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / seen;
    rec.train_accuracy = static_cast<double>(right) / seen;
    if (h.validate) {
      const Metrics val = evaluate(predictor, source.manifest(), source.vocab(), Split::Val, h.iou_threshold);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.generic_accuracy;
      rec.val_mean_iou = val.mean_iou;
      const bool better = !have_best || val.generic_accuracy > result.best_val.generic_accuracy ||
                          (val.generic_accuracy == result.best_val.generic_accuracy &&
                           val.mean_iou > result.best_val.mean_iou);
      if (better) {
        best = snapshot(model.params());
        have_best = true;
        result.best_val = val;
        result.best_epoch = epoch;
      }
    } else {
      result.best_epoch = epoch;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop && options.stop(rec)) break;
  }
  if (have_best) restore(model.params(), best);
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_accuracy,val_mean_iou,train_accuracy,seconds\n";
  out.precision(8);
  for (const auto& r : history)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy << ',' << r.val_mean_iou
        << ',' << r.train_accuracy << ',' << r.seconds << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "CHARTNET-CHECKPOINT";
constexpr int kCheckpointVersion = 1;

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<float> data;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
  std::string magic;
  std::size_t header_len = 0;
  in >> magic >> header_len;
  if (magic != kMagic || !in || in.get() != '\n') throw Error(ErrorCode::IoFailure, path.string() + " is not a checkpoint");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, path.string() + ": bad checkpoint header: " + e.what());
  }
  if (raw.header.value("format_version", 0) != kCheckpointVersion)
    throw Error(ErrorCode::IoFailure, path.string() + ": unsupported checkpoint version");
  if (with_data) {
    const std::size_t count = raw.header.at("scalar_count").get<std::size_t>();
    raw.data.resize(count);
    in.read(reinterpret_cast<char*>(raw.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
      throw Error(ErrorCode::IoFailure, path.string() + ": truncated checkpoint");
  }
  return raw;
}

CheckpointInfo info_of(const nlohmann::json& header) {
  CheckpointInfo info;
  info.config = ModelConfig::from_json(header.at("model"));
  info.vocab_hash = header.at("vocab_hash").get<std::string>();
  info.metadata = header.value("metadata", nlohmann::json::object());
  return info;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& vocab_hash,
                     const nlohmann::json& metadata) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto* p : model.params().all()) {
    table.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.size();
  }
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"model", model.config().to_json()},
                                 {"vocab_hash", vocab_hash},
                                 {"scalar_count", offset},
                                 {"parameters", table},
                                 {"metadata", metadata}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write checkpoint " + path.string());
  out << kMagic << ' ' << text.size() << '\n' << text;
  for (const auto* p : model.params().all())
    out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return info_of(read_raw(path, false).header);
}

std::unique_ptr<Model<float>> load_checkpoint(const std::filesystem::path& path, const std::string& expected_vocab_hash,
                                              CheckpointInfo* info) {
  const RawCheckpoint raw = read_raw(path, true);
  CheckpointInfo ci = info_of(raw.header);
  if (!expected_vocab_hash.empty() && ci.vocab_hash != expected_vocab_hash)
    throw Error(ErrorCode::VocabMismatch,
                "checkpoint vocab " + ci.vocab_hash + " does not match dataset vocab " + expected_vocab_hash);
  auto model = make_model<float>(ci.config);
  std::unordered_map<std::string, const nlohmann::json*> entries;
  for (const auto& e : raw.header.at("parameters")) entries[e.at("name").get<std::string>()] = &e;
  for (auto* p : model->params().all()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw Error(ErrorCode::IoFailure, path.string() + " lacks parameter " + p->name);
    if (it->second->at("shape").get<std::vector<int>>() != p->value.shape())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter " + p->name + " has a different shape");
    const std::size_t offset = it->second->at("offset").get<std::size_t>();
    if (offset + p->value.size() > raw.data.size()) throw Error(ErrorCode::IoFailure, "checkpoint table out of range");
    std::memcpy(p->value.data(), raw.data.data() + offset, p->value.size() * sizeof(float));
  }
  if (info != nullptr) *info = std::move(ci);
  return model;
}

}  // namespace chartnet
