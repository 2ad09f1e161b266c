#pragma once

// Perception encoders, the MAC reasoner with its two output heads, and the
// three comparison baselines, all behind one model interface.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chartnet/bbox.hpp"
#include "chartnet/nn/layers.hpp"
#include "chartnet/qa.hpp"
#include "json.hpp"

namespace chartnet {

enum class ModelKind { ChartNet, LstmOnly, CnnLstm, CnnLstmSa };
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

enum class BackboneKind { Desk, PretrainedAdapter };
std::string_view to_string(BackboneKind k);
BackboneKind backbone_kind_from_string(std::string_view s);

struct ModelConfig {
  ModelKind kind = ModelKind::ChartNet;
  BackboneKind backbone = BackboneKind::Desk;
  int input_resolution = 224;
  // Stride-2 3x3 conv + ELU blocks of the desk backbone.
  std::vector<int> backbone_channels = {8, 16, 32, 64};
  // Depth of precomputed features fed to the pretrained adapter.
  int adapter_channels = 1024;
  int adapter_side = 14;
  int kb_depth = 64;  // d
  int embed_dim = 64;
  int hidden = 128;  // h; control and memory have 2h dimensions
  int steps = 6;     // p
  int head_hidden = 512;
  int lstm_mlp_hidden = 1024;
  int baseline_hidden = 512;
  int question_vocab = 0;
  int answer_vocab = 0;
  std::uint64_t seed = 1;

  int d_ctrl() const { return 2 * hidden; }
  // Spatial side of the knowledge base.
  int kb_side() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Per-step attention distributions.
struct Trace {
  std::vector<std::vector<double>> word_attention;     // p entries of length S
  std::vector<std::vector<double>> spatial_attention;  // p entries of length H*W
};

template <class T>
struct QuestionEncoding {
  nn::Var<T> words;  // S x 2h, row s = [backward_s ; forward_s]
  nn::Var<T> q;      // 1 x 2h = [backward_1 ; forward_S]
};

template <class T>
struct ImageEncoding {
  nn::Var<T> kb;         // (H*W) x d knowledge base
  nn::Var<T> projected;  // per-image projection reused by every question
  nn::Var<T> attention_keys;
  int side = 0;
  bool valid() const { return kb.valid(); }
};

template <class T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParameterStore<T>& store, const ModelConfig& cfg, Rng& rng);
  // input: [3 x r x r] pixels in [0, 1] (desk) or [C x s x s] features (adapter).
  // Returns the (H*W) x d knowledge base.
  nn::Var<T> operator()(nn::Graph<T>& g, const nn::Tensor<T>& input) const;

 private:
  ModelConfig cfg_;
  std::vector<nn::Conv<T>> blocks_;
  nn::Conv<T> post1_, post2_;
};

template <class T>
class QuestionEncoder {
 public:
  QuestionEncoder() = default;
  QuestionEncoder(nn::ParameterStore<T>& store, const ModelConfig& cfg, Rng& rng);
  // Uses the non-pad prefix of token_ids; throws EmptyQuestion when it is empty.
  QuestionEncoding<T> operator()(nn::Graph<T>& g, std::span<const int> token_ids) const;

 private:
  nn::Parameter<T>* embedding_ = nullptr;
  nn::Lstm<T> fwd_, bwd_;
};

// Control, read and write units shared across steps; only the question
// projection q_i is per step.
template <class T>
class MacCell {
 public:
  MacCell() = default;
  MacCell(nn::ParameterStore<T>& store, int d_ctrl, int kb_depth, int steps, Rng& rng);

  int dim() const { return dim_; }
  // Returns (c_i, word attention 1 x S).
  std::pair<nn::Var<T>, nn::Var<T>> control(nn::Var<T> c_prev, nn::Var<T> q, nn::Var<T> words, int step) const;
  // Projects the knowledge base once per image: (H*W) x d -> (H*W) x d_ctrl.
  nn::Var<T> project_knowledge(nn::Var<T> kb) const;
  // Returns (r_i, spatial attention 1 x HW).
  std::pair<nn::Var<T>, nn::Var<T>> read(nn::Var<T> m_prev, nn::Var<T> c, nn::Var<T> kb_proj) const;
  nn::Var<T> write(nn::Var<T> m_prev, nn::Var<T> r) const;

  // Learned initial states.
  nn::Var<T> initial_control(nn::Graph<T>& g) const { return g.param(*c0_); }
  nn::Var<T> initial_memory(nn::Graph<T>& g) const { return g.param(*m0_); }

  // Runs p steps; returns m_p and fills the trace when given.
  nn::Var<T> run(const QuestionEncoding<T>& qe, nn::Var<T> kb_proj, int steps, Trace* trace) const;

 private:
  int dim_ = 0;
  std::vector<nn::Dense<T>> q_proj_;
  nn::Dense<T> cq_;
  nn::Parameter<T>* ca_ = nullptr;  // 1 x D
  nn::Dense<T> kproj_;
  nn::Dense<T> mproj_;
  nn::Parameter<T>* ri_ = nullptr;   // D x D, interaction path
  nn::Parameter<T>* rk_ = nullptr;   // D x D, direct knowledge path
  nn::Parameter<T>* ra_ = nullptr;   // 1 x D
  nn::Dense<T> write_;
  nn::Parameter<T>* c0_ = nullptr;
  nn::Parameter<T>* m0_ = nullptr;
};

// Abstract model: encode an image once, then answer any number of questions
// about it. forward returns 1 x V logits for generic questions and a 1 x 4
// sigmoid box for chart-specific ones.
template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Model() = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }

  virtual bool uses_image() const { return true; }
  virtual bool has_box_head() const { return false; }
  virtual ImageEncoding<T> encode_image(nn::Graph<T>& g, const nn::Tensor<T>& input) const = 0;
  virtual nn::Var<T> forward(nn::Graph<T>& g, const ImageEncoding<T>& image, std::span<const int> token_ids,
                             AnswerKind kind, Trace* trace = nullptr) const = 0;

 protected:
  ModelConfig cfg_;
  nn::ParameterStore<T> store_;
};

template <class T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg);

template <class T>
class ChartNetModel : public Model<T> {
 public:
  explicit ChartNetModel(const ModelConfig& cfg);
  bool has_box_head() const override { return true; }
  ImageEncoding<T> encode_image(nn::Graph<T>& g, const nn::Tensor<T>& input) const override;
  nn::Var<T> forward(nn::Graph<T>& g, const ImageEncoding<T>& image, std::span<const int> token_ids, AnswerKind kind,
                     Trace* trace = nullptr) const override;

  const MacCell<T>& cell() const { return cell_; }

 private:
  Backbone<T> backbone_;
  QuestionEncoder<T> question_;
  MacCell<T> cell_;
  nn::Dense<T> cls1_, cls2_, box1_, box2_;
};

// Decodes a regressor output into a box, sorting inverted coordinates.
NormBBox decode_box(const std::array<double, 4>& raw, bool* repaired = nullptr);

}  // namespace chartnet
