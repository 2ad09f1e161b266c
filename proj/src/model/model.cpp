#include "chartnet/model.hpp"

#include <cmath>

#include "chartnet/error.hpp"

namespace chartnet {

using namespace nn;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ChartNet: return "chartnet";
    case ModelKind::LstmOnly: return "lstm";
    case ModelKind::CnnLstm: return "cnn_lstm";
    case ModelKind::CnnLstmSa: return "cnn_lstm_sa";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
  for (auto k : {ModelKind::ChartNet, ModelKind::LstmOnly, ModelKind::CnnLstm, ModelKind::CnnLstmSa})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::InvalidConfig, "unknown model kind '" + std::string(s) + "'");
}

std::string_view to_string(BackboneKind k) { return k == BackboneKind::Desk ? "desk" : "pretrained-adapter"; }

BackboneKind backbone_kind_from_string(std::string_view s) {
  if (s == "desk") return BackboneKind::Desk;
  if (s == "pretrained-adapter") return BackboneKind::PretrainedAdapter;
  throw Error(ErrorCode::InvalidConfig, "unknown backbone '" + std::string(s) + "'");
}

int ModelConfig::kb_side() const {
  if (backbone == BackboneKind::PretrainedAdapter) return adapter_side;
  int side = input_resolution;
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) side = (side + 1) / 2;
  return side;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"backbone", to_string(backbone)},
          {"input_resolution", input_resolution},
          {"backbone_channels", backbone_channels},
          {"adapter_channels", adapter_channels},
          {"adapter_side", adapter_side},
          {"kb_depth", kb_depth},
          {"embed_dim", embed_dim},
          {"hidden", hidden},
          {"steps", steps},
          {"head_hidden", head_hidden},
          {"lstm_mlp_hidden", lstm_mlp_hidden},
          {"baseline_hidden", baseline_hidden},
          {"question_vocab", question_vocab},
          {"answer_vocab", answer_vocab},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.kind = model_kind_from_string(j.at("kind").get<std::string>());
    c.backbone = backbone_kind_from_string(j.at("backbone").get<std::string>());
    c.input_resolution = j.at("input_resolution").get<int>();
    c.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
    c.adapter_channels = j.at("adapter_channels").get<int>();
    c.adapter_side = j.at("adapter_side").get<int>();
    c.kb_depth = j.at("kb_depth").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.steps = j.at("steps").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.lstm_mlp_hidden = j.at("lstm_mlp_hidden").get<int>();
    c.baseline_hidden = j.at("baseline_hidden").get<int>();
    c.question_vocab = j.at("question_vocab").get<int>();
    c.answer_vocab = j.at("answer_vocab").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
  }
  return c;
}

namespace {

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.storage().begin(), t.storage().end());
}

void check_shape(const std::vector<int>& got, const std::vector<int>& want, const char* what) {
  if (got != want)
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": expected " + shape_string(want) + ", got " + shape_string(got));
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoders

template <class T>
Backbone<T>::Backbone(ParameterStore<T>& store, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  int in_ch = 3;
  if (cfg.backbone == BackboneKind::Desk) {
    for (std::size_t i = 0; i < cfg.backbone_channels.size(); ++i) {
      const int out = cfg.backbone_channels[i];
      blocks_.push_back(Conv<T>::create(store, "backbone.conv" + std::to_string(i), in_ch, out, 3, 2, 1, rng));
      in_ch = out;
    }
  } else {
    in_ch = cfg.adapter_channels;
  }
  post1_ = Conv<T>::create(store, "kb.conv1", in_ch, cfg.kb_depth, 3, 1, 1, rng);
  post2_ = Conv<T>::create(store, "kb.conv2", cfg.kb_depth, cfg.kb_depth, 3, 1, 1, rng);
}

template <class T>
Var<T> Backbone<T>::operator()(Graph<T>& g, const Tensor<T>& input) const {
  Var<T> x;
  if (cfg_.backbone == BackboneKind::Desk) {
    const int r = cfg_.input_resolution;
    check_shape(input.shape(), {3, r, r}, "image");
    // Centre pixel values around zero.
    Tensor<T> centred = input;
    for (auto& v : centred.storage()) v -= T(0.5);
    x = g.constant(std::move(centred));
    for (const auto& b : blocks_) x = elu(b(x));
  } else {
    check_shape(input.shape(), {cfg_.adapter_channels, cfg_.adapter_side, cfg_.adapter_side}, "adapter features");
    x = g.constant(input);
  }
  x = elu(post2_(elu(post1_(x))));
  const int d = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
  return transpose(reshape(x, {d, hw}));
}

template <class T>
QuestionEncoder<T>::QuestionEncoder(ParameterStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  if (cfg.question_vocab < 2) throw Error(ErrorCode::InvalidConfig, "question vocabulary is empty");
  embedding_ = &store.add("question.embedding", {cfg.question_vocab, cfg.embed_dim});
  init_uniform(*embedding_, 1.0, rng);
  fwd_ = Lstm<T>::create(store, "question.lstm_fwd", cfg.embed_dim, cfg.hidden, rng);
  bwd_ = Lstm<T>::create(store, "question.lstm_bwd", cfg.embed_dim, cfg.hidden, rng);
}

template <class T>
QuestionEncoding<T> QuestionEncoder<T>::operator()(Graph<T>& g, std::span<const int> token_ids) const {
  std::vector<int> ids;
  for (int t : token_ids) {
    if (t == 0) break;
    if (t < 0 || t >= embedding_->value.dim(0))
      throw Error(ErrorCode::ShapeMismatch, "token id " + std::to_string(t) + " outside the vocabulary");
    ids.push_back(t);
  }
  if (ids.empty()) throw Error(ErrorCode::EmptyQuestion, "question has no non-pad tokens");
  Var<T> emb = gather_rows(g.param(*embedding_), std::span<const int>(ids));
  const auto f = fwd_.run(emb, false);
  const auto b = bwd_.run(emb, true);
  std::vector<Var<T>> rows;
  rows.reserve(ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) rows.push_back(concat_cols<T>({b[s], f[s]}));
  QuestionEncoding<T> out;
  out.words = stack_rows(rows);
  out.q = concat_cols<T>({b.front(), f.back()});
  return out;
}

// ---------------------------------------------------------------------------
// MAC cell

template <class T>
MacCell<T>::MacCell(ParameterStore<T>& store, int D, int kb_depth, int steps, Rng& rng) : dim_(D) {
  for (int i = 0; i < steps; ++i) q_proj_.push_back(Dense<T>::create(store, "mac.control.q" + std::to_string(i), D, D, rng));
  cq_ = Dense<T>::create(store, "mac.control.cq", 2 * D, D, rng);
  ca_ = &store.add("mac.control.attn", {1, D});
  init_uniform(*ca_, std::sqrt(3.0 / D), rng);
  kproj_ = Dense<T>::create(store, "mac.read.k", kb_depth, D, rng);
  mproj_ = Dense<T>::create(store, "mac.read.m", D, D, rng);
  ri_ = &store.add("mac.read.interaction", {D, D});
  rk_ = &store.add("mac.read.direct", {D, D});
  init_uniform(*ri_, std::sqrt(3.0 / D), rng);
  init_uniform(*rk_, std::sqrt(3.0 / D), rng);
  ra_ = &store.add("mac.read.attn", {1, D});
  init_uniform(*ra_, std::sqrt(3.0 / D), rng);
  write_ = Dense<T>::create(store, "mac.write", 2 * D, D, rng);
  c0_ = &store.add("mac.c0", {1, D});
  m0_ = &store.add("mac.m0", {1, D});
  init_uniform(*c0_, 0.1, rng);
  init_uniform(*m0_, 0.1, rng);
}

template <class T>
std::pair<Var<T>, Var<T>> MacCell<T>::control(Var<T> c_prev, Var<T> q, Var<T> words, int step) const {
  if (step < 0 || step >= static_cast<int>(q_proj_.size()))
    throw Error(ErrorCode::ShapeMismatch, "control step " + std::to_string(step) + " outside [0, p)");
  Graph<T>& g = q.graph();
  Var<T> qi = q_proj_[static_cast<std::size_t>(step)](q);
  Var<T> cq = cq_(concat_cols<T>({c_prev, qi}));
  // logits_s = sum_j attn_j * cq_j * cw_sj
  Var<T> logits = matmul(words, transpose(mul(cq, g.param(*ca_))));
  Var<T> attn = softmax_rows(reshape(logits, {1, words.rows()}));
  return {matmul(attn, words), attn};
}

template <class T>
Var<T> MacCell<T>::project_knowledge(Var<T> kb) const {
  return kproj_(kb);
}

template <class T>
std::pair<Var<T>, Var<T>> MacCell<T>::read(Var<T> m_prev, Var<T> c, Var<T> kb_proj) const {
  Graph<T>& g = c.graph();
  // The per-cell logit  w_a . (c * (W_i (k_hw * m') + W_k k_hw))  is evaluated as
  // k_hw . (m' * (u W_i) + u W_k) with u = w_a * c, which avoids forming the
  // interaction for every cell.
  Var<T> m_hat = mproj_(m_prev);
  Var<T> u = mul(c, g.param(*ra_));
  Var<T> v = add(mul(m_hat, matmul(u, g.param(*ri_))), matmul(u, g.param(*rk_)));
  Var<T> logits = matmul(kb_proj, transpose(v));
  Var<T> attn = softmax_rows(reshape(logits, {1, kb_proj.rows()}));
  return {matmul(attn, kb_proj), attn};
}

template <class T>
Var<T> MacCell<T>::write(Var<T> m_prev, Var<T> r) const {
  return write_(concat_cols<T>({r, m_prev}));
}

template <class T>
Var<T> MacCell<T>::run(const QuestionEncoding<T>& qe, Var<T> kb_proj, int steps, Trace* trace) const {
  if (steps < 1) throw Error(ErrorCode::InvalidConfig, "MAC needs at least one reasoning step");
  Graph<T>& g = qe.q.graph();
  Var<T> c = initial_control(g), m = initial_memory(g);
  for (int i = 0; i < steps; ++i) {
    auto [ci, wa] = control(c, qe.q, qe.words, i);
    auto [ri, sa] = read(m, ci, kb_proj);
    m = write(m, ri);
    c = ci;
    if (trace != nullptr) {
      trace->word_attention.push_back(to_doubles(wa.value()));
      trace->spatial_attention.push_back(to_doubles(sa.value()));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// ChartNet

template <class T>
ChartNetModel<T>::ChartNetModel(const ModelConfig& cfg) : Model<T>(cfg) {
  if (cfg.answer_vocab < 1) throw Error(ErrorCode::InvalidConfig, "answer vocabulary is empty");
  Rng rng(cfg.seed);
  auto& s = this->store_;
  backbone_ = Backbone<T>(s, cfg, rng);
  question_ = QuestionEncoder<T>(s, cfg, rng);
  cell_ = MacCell<T>(s, cfg.d_ctrl(), cfg.kb_depth, cfg.steps, rng);
  cls1_ = Dense<T>::create(s, "head.cls1", 2 * cfg.d_ctrl(), cfg.head_hidden, rng);
  cls2_ = Dense<T>::create(s, "head.cls2", cfg.head_hidden, cfg.answer_vocab, rng);
  box1_ = Dense<T>::create(s, "head.box1", 2 * cfg.d_ctrl(), cfg.head_hidden, rng);
  box2_ = Dense<T>::create(s, "head.box2", cfg.head_hidden, 4, rng);
}

template <class T>
ImageEncoding<T> ChartNetModel<T>::encode_image(Graph<T>& g, const Tensor<T>& input) const {
  ImageEncoding<T> e;
  e.kb = backbone_(g, input);
  e.projected = cell_.project_knowledge(e.kb);
  e.side = this->cfg_.kb_side();
  return e;
}

template <class T>
Var<T> ChartNetModel<T>::forward(Graph<T>& g, const ImageEncoding<T>& image, std::span<const int> token_ids,
                                 AnswerKind kind, Trace* trace) const {
  const auto qe = question_(g, token_ids);
  Var<T> m = cell_.run(qe, image.projected, this->cfg_.steps, trace);
  Var<T> joint = concat_cols<T>({m, qe.q});
  if (kind == AnswerKind::Generic) return cls2_(elu(cls1_(joint)));
  return sigmoid(box2_(elu(box1_(joint))));
}

NormBBox decode_box(const std::array<double, 4>& raw, bool* repaired) {
  NormBBox b = NormBBox::from_array(raw);
  const bool swapped = repair_box(b);
  if (repaired != nullptr) *repaired = swapped;
  return b;
}

template class Backbone<float>;
template class Backbone<double>;
template class QuestionEncoder<float>;
template class QuestionEncoder<double>;
template class MacCell<float>;
template class MacCell<double>;
template class ChartNetModel<float>;
template class ChartNetModel<double>;

}  // namespace chartnet
