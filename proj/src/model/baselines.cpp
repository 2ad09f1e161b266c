#include "chartnet/error.hpp"
#include "chartnet/model.hpp"

namespace chartnet {

using namespace nn;

namespace {

template <class T>
void require_generic(AnswerKind kind) {
  if (kind != AnswerKind::Generic) throw Error(ErrorCode::KindMismatch, "baselines answer generic questions only");
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.storage().begin(), t.storage().end());
}

// Question-only: biLSTM question vector into a 1024-unit MLP.
template <class T>
class LstmOnlyModel : public Model<T> {
 public:
  explicit LstmOnlyModel(const ModelConfig& cfg) : Model<T>(cfg) {
    Rng rng(cfg.seed);
    question_ = QuestionEncoder<T>(this->store_, cfg, rng);
    fc1_ = Dense<T>::create(this->store_, "lstm.fc1", cfg.d_ctrl(), cfg.lstm_mlp_hidden, rng);
    fc2_ = Dense<T>::create(this->store_, "lstm.fc2", cfg.lstm_mlp_hidden, cfg.answer_vocab, rng);
  }
  bool uses_image() const override { return false; }
  ImageEncoding<T> encode_image(Graph<T>&, const Tensor<T>&) const override { return {}; }
  Var<T> forward(Graph<T>& g, const ImageEncoding<T>&, std::span<const int> tokens, AnswerKind kind,
                 Trace*) const override {
    require_generic<T>(kind);
    return fc2_(elu(fc1_(question_(g, tokens).q)));
  }

 private:
  QuestionEncoder<T> question_;
  Dense<T> fc1_, fc2_;
};

// Globally pooled CNN features concatenated with the question vector.
template <class T>
class CnnLstmModel : public Model<T> {
 public:
  explicit CnnLstmModel(const ModelConfig& cfg) : Model<T>(cfg) {
    Rng rng(cfg.seed);
    backbone_ = Backbone<T>(this->store_, cfg, rng);
    question_ = QuestionEncoder<T>(this->store_, cfg, rng);
    fc1_ = Dense<T>::create(this->store_, "cnn_lstm.fc1", cfg.kb_depth + cfg.d_ctrl(), cfg.baseline_hidden, rng);
    fc2_ = Dense<T>::create(this->store_, "cnn_lstm.fc2", cfg.baseline_hidden, cfg.answer_vocab, rng);
  }
  ImageEncoding<T> encode_image(Graph<T>& g, const Tensor<T>& input) const override {
    ImageEncoding<T> e;
    e.kb = backbone_(g, input);
    e.projected = mean_rows(e.kb);
    e.side = this->cfg_.kb_side();
    return e;
  }
  Var<T> forward(Graph<T>& g, const ImageEncoding<T>& image, std::span<const int> tokens, AnswerKind kind,
                 Trace*) const override {
    require_generic<T>(kind);
    if (!image.valid()) throw Error(ErrorCode::MissingImage, "cnn_lstm needs an image");
    Var<T> joint = concat_cols<T>({image.projected, question_(g, tokens).q});
    return fc2_(elu(fc1_(joint)));
  }

 private:
  Backbone<T> backbone_;
  QuestionEncoder<T> question_;
  Dense<T> fc1_, fc2_;
};

// Two rounds of soft spatial attention over the CNN map, each refining the query.
template <class T>
class CnnLstmSaModel : public Model<T> {
 public:
  explicit CnnLstmSaModel(const ModelConfig& cfg) : Model<T>(cfg) {
    Rng rng(cfg.seed);
    auto& s = this->store_;
    const int D = cfg.d_ctrl();
    backbone_ = Backbone<T>(s, cfg, rng);
    question_ = QuestionEncoder<T>(s, cfg, rng);
    value_ = Dense<T>::create(s, "sa.value", cfg.kb_depth, D, rng);
    for (int k = 0; k < 2; ++k) {
      const std::string p = "sa.round" + std::to_string(k);
      image_att_.push_back(Dense<T>::create(s, p + ".image", D, D, rng));
      query_att_.push_back(Dense<T>::create(s, p + ".query", D, D, rng));
      score_.push_back(Dense<T>::create(s, p + ".score", D, 1, rng));
    }
    fc1_ = Dense<T>::create(s, "sa.fc1", D, cfg.baseline_hidden, rng);
    fc2_ = Dense<T>::create(s, "sa.fc2", cfg.baseline_hidden, cfg.answer_vocab, rng);
  }
  ImageEncoding<T> encode_image(Graph<T>& g, const Tensor<T>& input) const override {
    ImageEncoding<T> e;
    e.kb = backbone_(g, input);
    e.projected = value_(e.kb);
    // Image-side attention projections depend only on the image; both rounds
    // are stacked side by side.
    e.attention_keys = concat_cols<T>({image_att_[0](e.projected), image_att_[1](e.projected)});
    e.side = this->cfg_.kb_side();
    return e;
  }
  Var<T> forward(Graph<T>& g, const ImageEncoding<T>& image, std::span<const int> tokens, AnswerKind kind,
                 Trace* trace) const override {
    require_generic<T>(kind);
    if (!image.valid()) throw Error(ErrorCode::MissingImage, "cnn_lstm_sa needs an image");
    const int D = this->cfg_.d_ctrl();
    Var<T> u = question_(g, tokens).q;
    for (int k = 0; k < 2; ++k) {
      Var<T> keys = slice_cols(image.attention_keys, k * D, D);
      Var<T> h = tanh(add_row(keys, query_att_[static_cast<std::size_t>(k)](u)));
      Var<T> scores = score_[static_cast<std::size_t>(k)](h);
      Var<T> p = softmax_rows(reshape(scores, {1, scores.rows()}));
      u = add(matmul(p, image.projected), u);
      if (trace != nullptr) trace->spatial_attention.push_back(to_doubles(p.value()));
    }
    return fc2_(elu(fc1_(u)));
  }

 private:
  Backbone<T> backbone_;
  QuestionEncoder<T> question_;
  Dense<T> value_;
  std::vector<Dense<T>> image_att_, query_att_, score_;
  Dense<T> fc1_, fc2_;
};

}  // namespace

template <class T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg) {
  if (cfg.answer_vocab < 1) throw Error(ErrorCode::InvalidConfig, "answer vocabulary is empty");
  switch (cfg.kind) {
    case ModelKind::ChartNet: return std::make_unique<ChartNetModel<T>>(cfg);
    case ModelKind::LstmOnly: return std::make_unique<LstmOnlyModel<T>>(cfg);
    case ModelKind::CnnLstm: return std::make_unique<CnnLstmModel<T>>(cfg);
    case ModelKind::CnnLstmSa: return std::make_unique<CnnLstmSaModel<T>>(cfg);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown model kind");
}

template std::unique_ptr<Model<float>> make_model(const ModelConfig&);
template std::unique_ptr<Model<double>> make_model(const ModelConfig&);

}  // namespace chartnet
