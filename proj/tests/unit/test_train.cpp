#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "../support/model_fixtures.hpp"
#include "../support/temp_dir.hpp"
#include "chartnet/error.hpp"
#include "chartnet/train.hpp"
#include "doctest.h"

using namespace chartnet;
using namespace chartnet::nn;
namespace fs = std::filesystem;
using chartnet::testing::TempDir;

namespace {

DatasetConfig tiny(ChartType type, const fs::path& root) {
  DatasetConfig c;
  c.chart_type = type;
  c.train_charts = 10;
  c.val_charts = 5;
  c.test_charts = 5;
  c.seed = 5;
  c.root = root;
  return c;
}

// Toy model sized for a 32 px dataset image.
ModelConfig tiny_model(ModelKind kind, const Vocab& vocab) {
  ModelConfig c = chartnet::testing::toy_config(kind);
  c.input_resolution = 32;
  c.head_hidden = 16;
  c.question_vocab = static_cast<int>(vocab.question_tokens.size());
  c.answer_vocab = static_cast<int>(vocab.answer_tokens.size());
  return c;
}

double loss_of(const std::vector<double>& logits, AnswerKind kind, const Target& t) {
  Graph<double> g;
  Var<double> out = g.constant(Tensor<double>::row(logits));
  return compute_loss(out, kind, t).value()[0];
}

Parameter<float>& add_row(ParameterStore<float>& store, const std::string& name, std::vector<float> values) {
  auto& p = store.add(name, {1, static_cast<int>(values.size())});
  p.value = Tensor<float>::row(values);
  return p;
}

Prediction generic(int class_id, int vocab) {
  Prediction p;
  p.class_id = class_id;
  p.distribution.assign(static_cast<std::size_t>(vocab), 0.0);
  p.distribution[static_cast<std::size_t>(class_id)] = 1.0;
  return p;
}

Prediction boxed(const NormBBox& b) {
  Prediction p;
  p.kind = AnswerKind::ChartSpecific;
  p.raw_box = b.as_array();
  return p;
}

// Answers every question from the manifest's ground truth.
class OraclePredictor : public Predictor {
 public:
  explicit OraclePredictor(const Vocab& vocab) : vocab_(vocab) {}
  bool answers_chart_specific() const override { return true; }
  std::vector<Prediction> predict(const ChartRecord& record, const std::vector<int>& qa) override {
    std::vector<Prediction> out;
    for (int i : qa) {
      const Answer& a = record.qa_pairs[static_cast<std::size_t>(i)].answer;
      if (a.kind == AnswerKind::Generic)
        out.push_back(generic(vocab_.answer_id(a.generic_token), static_cast<int>(vocab_.answer_tokens.size())));
      else
        out.push_back(boxed(a.target_box));
    }
    return out;
  }

 private:
  const Vocab& vocab_;
};

}  // namespace

TEST_SUITE("iou") {
  TEST_CASE("identity, disjoint and the hand case") {
    const NormBBox a{0.0, 0.0, 0.2, 0.2};
    const NormBBox b{0.1, 0.1, 0.3, 0.3};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(b, b) == 1.0);
    CHECK(iou(a, NormBBox{0.5, 0.5, 0.9, 0.8}) == 0.0);
    CHECK(iou(a, NormBBox{0.2, 0.0, 0.4, 0.2}) == 0.0);  // shared edge only
    CHECK(std::abs(iou(a, b) - 1.0 / 7.0) <= 1e-12);
    CHECK(iou(a, b) == iou(b, a));
  }

  TEST_CASE("degenerate boxes are rejected") {
    CHECK_THROWS_AS(iou(NormBBox{0.1, 0.1, 0.1, 0.5}, NormBBox{0, 0, 1, 1}), Error);
    NormBBox inverted{0.6, 0.2, 0.1, 0.7};
    CHECK(repair_box(inverted));
    CHECK(inverted == NormBBox{0.1, 0.2, 0.6, 0.7});
  }

  TEST_CASE("bounded and symmetric on random boxes") {
    Rng rng(11);
    auto draw = [&] {
      double x0 = rng.uniform(), x1 = rng.uniform(), y0 = rng.uniform(), y1 = rng.uniform();
      return NormBBox{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
    };
    for (int i = 0; i < 500; ++i) {
      const NormBBox p = draw(), q = draw();
      const double v = iou(p, q);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(v == iou(q, p));
    }
  }
}

TEST_SUITE("loss") {
  TEST_CASE("cross-entropy fixtures") {
    const Target t{AnswerKind::Generic, 2, {}};
    CHECK(loss_of({-50, -50, 50, -50}, AnswerKind::Generic, t) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_of({0, 0, 0, 0, 0}, AnswerKind::Generic, t) == doctest::Approx(std::log(5.0)));
  }

  TEST_CASE("cross-entropy decreases strictly in the target probability") {
    const Target t{AnswerKind::Generic, 0, {}};
    double previous = INFINITY;
    for (double z = -4.0; z <= 4.0; z += 0.25) {
      const double l = loss_of({z, 0.3, -0.2}, AnswerKind::Generic, t);
      CHECK(l >= 0.0);
      CHECK(l < previous);
      previous = l;
    }
  }

  TEST_CASE("box regression is the mean squared coordinate error") {
    const Target t{AnswerKind::ChartSpecific, -1, {0.1, 0.2, 0.3, 0.4}};
    CHECK(loss_of({0.1, 0.2, 0.3, 0.4}, AnswerKind::ChartSpecific, t) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss_of({0.2, 0.2, 0.3, 0.6}, AnswerKind::ChartSpecific, t) ==
          doctest::Approx((0.01 + 0.04) / 4.0));
  }

  TEST_CASE("kind mismatch") {
    const Target t{AnswerKind::ChartSpecific, -1, {0.1, 0.2, 0.3, 0.4}};
    CHECK_THROWS_AS(loss_of({0.1, 0.2, 0.3, 0.4}, AnswerKind::Generic, t), Error);
    MetricsAccumulator acc;
    CHECK_THROWS_AS(acc.add("x", generic(0, 2), t), Error);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("accumulator counts, repairs and per-template scores") {
    MetricsAccumulator acc(0.5);
    acc.add("a", generic(1, 3), {AnswerKind::Generic, 1, {}});
    acc.add("a", generic(0, 3), {AnswerKind::Generic, 1, {}});
    acc.add("b", boxed({0.0, 0.0, 0.2, 0.2}), {AnswerKind::ChartSpecific, -1, {0.0, 0.0, 0.2, 0.2}});
    acc.add("b", boxed({0.2, 0.2, 0.0, 0.0}), {AnswerKind::ChartSpecific, -1, {0.1, 0.1, 0.3, 0.3}});
    const Metrics m = acc.finish();
    CHECK(m.generic_count == 2);
    CHECK(m.generic_accuracy == 0.5);
    CHECK(m.chart_specific_count == 2);
    CHECK(m.repaired_boxes == 1);
    CHECK(m.mean_iou == doctest::Approx((1.0 + 1.0 / 7.0) / 2.0));
    CHECK(m.acc_at_iou == 0.5);
    CHECK(m.per_template.at("a").correct == 1);
    CHECK(m.per_template.at("b").count == 2);
    const auto j = m.to_json();
    CHECK(j.at("repaired_boxes") == 1);
    CHECK(j.at("per_template").at("a").at("accuracy") == 0.5);
  }

  TEST_CASE("acc_at_iou is nonincreasing in the threshold") {
    Rng rng(3);
    std::vector<std::pair<Prediction, Target>> items;
    for (int i = 0; i < 200; ++i) {
      const double x = 0.3 * rng.uniform(), y = 0.3 * rng.uniform();
      const NormBBox truth{x, y, x + 0.4, y + 0.3};
      const double dx = 0.2 * (rng.uniform() - 0.5), dy = 0.2 * (rng.uniform() - 0.5);
      items.push_back({boxed({x + dx, y + dy, x + 0.4 + dx, y + 0.3 + dy}), {AnswerKind::ChartSpecific, -1, truth}});
    }
    double previous = 1.0;
    for (double th = 0.0; th <= 1.0; th += 0.05) {
      MetricsAccumulator acc(th);
      for (const auto& [p, t] : items) acc.add("t", p, t);
      const double a = acc.finish().acc_at_iou;
      CHECK(a <= previous);
      previous = a;
    }
  }

  TEST_CASE("order invariance") {
    Rng rng(4);
    std::vector<std::pair<Prediction, Target>> items;
    for (int i = 0; i < 60; ++i) {
      const int truth = static_cast<int>(rng.below(5));
      items.push_back({generic(static_cast<int>(rng.below(5)), 5), {AnswerKind::Generic, truth, {}}});
    }
    MetricsAccumulator forward, backward;
    for (const auto& [p, t] : items) forward.add("g", p, t);
    for (auto it = items.rbegin(); it != items.rend(); ++it) backward.add("g", it->first, it->second);
    auto a = forward.finish().to_json(), b = backward.finish().to_json();
    // The mean loss is a floating-point sum, so only its value is order-sensitive in the last bits.
    CHECK(a["loss"].get<double>() == doctest::Approx(b["loss"].get<double>()));
    a.erase("loss");
    b.erase("loss");
    CHECK(a == b);
  }

  TEST_CASE("uniform random classifier scores about 1/V") {
    const int v = 14, n = 20000;
    Rng rng(8);
    MetricsAccumulator acc;
    for (int i = 0; i < n; ++i) {
      const int truth = static_cast<int>(rng.below(static_cast<std::uint64_t>(v)));
      Prediction p;
      p.distribution.assign(v, 1.0 / v);
      p.class_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(v)));
      acc.add("g", p, {AnswerKind::Generic, truth, {}});
    }
    const double p = 1.0 / v;
    const double sigma = std::sqrt(p * (1.0 - p) / n);
    const Metrics m = acc.finish();
    CHECK(std::abs(m.generic_accuracy - p) <= 3.0 * sigma);
    CHECK(m.loss == doctest::Approx(std::log(static_cast<double>(v))));
  }
}

TEST_CASE("oracle predictor scores perfectly through evaluate") {
  TempDir d("chartnet_train_oracle");
  for (auto type : {ChartType::Bar, ChartType::Pie}) {
    const auto m = build_dataset(tiny(type, d.path));
    const auto vocab = build_vocab(m);
    OraclePredictor oracle(vocab);
    const Metrics train = evaluate(oracle, m, vocab, Split::Train);
    CHECK(train.generic_accuracy == 1.0);
    CHECK(train.mean_iou == 1.0);
    CHECK(train.acc_at_iou == 1.0);
    CHECK(train.generic_count + train.chart_specific_count == 100);
    const Metrics test = evaluate(oracle, m, vocab, Split::Test);
    CHECK(test.generic_count + test.chart_specific_count == 50);
    CHECK(test.mean_iou == 1.0);
  }
}

TEST_CASE("adam step by hand") {
  ParameterStore<float> store;
  auto& p = add_row(store, "w", {1.0f, -2.0f});
  Hyperparameters h;
  h.learning_rate = 0.1;
  Adam adam(store, h);
  p.grad = Tensor<float>::row({2.0f, -0.5f});
  adam.step();
  // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  CHECK(p.value.storage()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value.storage()[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(p.grad.storage()[0] == 0.0f);
  CHECK(adam.steps() == 1);
}

TEST_CASE("gradient clipping rescales by the global norm") {
  ParameterStore<float> store;
  auto& a = add_row(store, "a", {0.0f});
  auto& b = add_row(store, "b", {0.0f});
  Hyperparameters h;
  h.learning_rate = 1.0;
  h.beta1 = 0.0;
  h.beta2 = 0.0;
  h.adam_epsilon = 0.0;
  h.clip_norm = 1.0;
  Adam adam(store, h);
  // With both betas 0 the first step is lr * sign(g) whatever the scale.
  a.grad = Tensor<float>::row({3.0f});
  b.grad = Tensor<float>::row({-4.0f});
  adam.step();
  CHECK(a.value.storage()[0] == doctest::Approx(-1.0));
  CHECK(b.value.storage()[0] == doctest::Approx(1.0));

  Hyperparameters h2;
  h2.learning_rate = 1.0;
  h2.beta1 = 0.0;
  h2.beta2 = 0.5;
  h2.adam_epsilon = 0.0;
  h2.clip_norm = 1.0;
  ParameterStore<float> s2;
  auto& c = add_row(s2, "c", {0.0f});
  Adam adam2(s2, h2);
  c.grad = Tensor<float>::row({10.0f});  // clipped to 1
  adam2.step();
  c.grad = Tensor<float>::row({0.5f});  // below the norm, unclipped
  adam2.step();
  // v1 = 0.5 * 1, v2 = 0.5 * v1 + 0.5 * 0.25 = 0.375, bias 0.75, second step 0.5 / sqrt(0.5).
  // Unclipped, v1 would be 50 and the second step about 0.086.
  CHECK(c.value.storage()[0] == doctest::Approx(-1.0 - 0.5 / std::sqrt(0.375 / 0.75)).epsilon(1e-5));
}

TEST_CASE("hyperparameters json and validation") {
  Hyperparameters h;
  h.batch_size = 7;
  h.train_subset = TrainSubset::ChartSpecific;
  h.clip_norm = 2.5;
  const auto back = Hyperparameters::from_json(h.to_json());
  CHECK(back.batch_size == 7);
  CHECK(back.train_subset == TrainSubset::ChartSpecific);
  CHECK(back.clip_norm == 2.5);
  CHECK(back.learning_rate == 1e-5);
  auto bad = h.to_json();
  bad["epochs"] = 0;
  CHECK_THROWS_AS(Hyperparameters::from_json(bad), Error);
  CHECK(train_subset_from_string("generic") == TrainSubset::Generic);
  CHECK_THROWS_AS(train_subset_from_string("bogus"), Error);
}

TEST_CASE("training examples respect heads and subsets") {
  TempDir d("chartnet_train_examples");
  const auto m = build_dataset(tiny(ChartType::Pie, d.path));
  const auto vocab = build_vocab(m);
  const auto chartnet = make_model<float>(tiny_model(ModelKind::ChartNet, vocab));
  const auto lstm = make_model<float>(tiny_model(ModelKind::LstmOnly, vocab));
  const auto all = training_examples(m, Split::Train, *chartnet, TrainSubset::All);
  const auto gen = training_examples(m, Split::Train, *chartnet, TrainSubset::Generic);
  const auto cs = training_examples(m, Split::Train, *chartnet, TrainSubset::ChartSpecific);
  CHECK(all.size() == 100);
  CHECK(gen.size() + cs.size() == 100);
  CHECK(!cs.empty());
  CHECK(training_examples(m, Split::Train, *lstm, TrainSubset::All).size() == gen.size());
  for (const auto& e : cs)
    CHECK(e.record->qa_pairs[static_cast<std::size_t>(e.qa_index)].answer.kind == AnswerKind::ChartSpecific);
}

TEST_CASE("seeded training is reproducible and writes history") {
  TempDir d("chartnet_train_det");
  const auto m = build_dataset(tiny(ChartType::Bar, d.path));
  const auto vocab = build_vocab(m);
  ExampleSource source(m, vocab, 32);
  TrainOptions opt;
  opt.hyper.batch_size = 16;
  opt.hyper.learning_rate = 1e-3;
  opt.hyper.epochs = 2;
  opt.hyper.seed = 9;

  auto run = [&] {
    auto model = make_model<float>(tiny_model(ModelKind::ChartNet, vocab));
    auto r = train(*model, source, opt);
    return std::make_pair(std::move(model), r);
  };
  auto [m1, r1] = run();
  auto [m2, r2] = run();
  REQUIRE(r1.history.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
    CHECK(std::isfinite(r1.history[i].train_loss));
  }
  CHECK(r1.best_epoch >= 1);
  const auto p1 = m1->params().all(), p2 = m2->params().all();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value.storage() == p2[i]->value.storage());

  const fs::path csv = d.path / "history.csv";
  write_history_csv(r1.history, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("epoch,train_loss,val_loss,val_accuracy,val_mean_iou", 0) == 0);
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("non-finite loss reports the batch") {
  TempDir d("chartnet_train_nan");
  const auto m = build_dataset(tiny(ChartType::Pie, d.path));
  const auto vocab = build_vocab(m);
  ExampleSource source(m, vocab, 32);
  auto model = make_model<float>(tiny_model(ModelKind::LstmOnly, vocab));
  model->params().get("lstm.fc2.b").value.storage()[0] = NAN;
  TrainOptions opt;
  opt.hyper.epochs = 1;
  try {
    train(*model, source, opt);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip and vocab guard") {
  TempDir d("chartnet_train_ckpt");
  const auto m = build_dataset(tiny(ChartType::Pie, d.path));
  const auto vocab = build_vocab(m);
  for (auto kind : {ModelKind::ChartNet, ModelKind::CnnLstmSa, ModelKind::LstmOnly}) {
    auto model = make_model<float>(tiny_model(kind, vocab));
    const fs::path path = d.path / "model.ckpt";
    save_checkpoint(path, *model, vocab.hash(), {{"epoch", 3}});
    CheckpointInfo info;
    auto back = load_checkpoint(path, vocab.hash(), &info);
    CHECK(info.vocab_hash == vocab.hash());
    CHECK(info.metadata.at("epoch") == 3);
    CHECK(info.config.kind == kind);
    CHECK(back->config().to_json() == model->config().to_json());
    const auto a = model->params().all(), b = back->params().all();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      CHECK(a[i]->value.storage() == b[i]->value.storage());
    }
    CHECK_THROWS_AS(load_checkpoint(path, "0000"), Error);
    try {
      load_checkpoint(path, "0000");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::VocabMismatch);
    }
  }

  const fs::path junk = d.path / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(junk), Error);
  CHECK_THROWS_AS(load_checkpoint(d.path / "missing.ckpt"), Error);

  // Truncated payload.
  auto model = make_model<float>(tiny_model(ModelKind::LstmOnly, vocab));
  const fs::path full = d.path / "full.ckpt";
  save_checkpoint(full, *model, vocab.hash());
  const auto size = fs::file_size(full);
  fs::resize_file(full, size - 8);
  CHECK_THROWS_AS(load_checkpoint(full), Error);
}

TEST_CASE("model predictor agrees with a direct forward pass") {
  TempDir d("chartnet_train_pred");
  const auto m = build_dataset(tiny(ChartType::Bar, d.path));
  const auto vocab = build_vocab(m);
  ExampleSource source(m, vocab, 32);
  auto model = make_model<float>(tiny_model(ModelKind::ChartNet, vocab));
  ModelPredictor predictor(*model, source);
  const ChartRecord& rec = *m.split(Split::Val).front();
  std::vector<int> all(rec.qa_pairs.size());
  std::iota(all.begin(), all.end(), 0);
  const auto preds = predictor.predict(rec, all);
  REQUIRE(preds.size() == all.size());
  Graph<float> g;
  const auto enc = model->encode_image(g, model_input(model->config(), source, rec));
  for (int i : all) {
    const ModelExample ex = source.example(rec, i, false);
    const auto out = model->forward(g, enc, ex.token_ids, ex.kind).value().storage();
    CHECK(preds[static_cast<std::size_t>(i)].kind == ex.kind);
    if (ex.kind == AnswerKind::Generic) {
      const int arg = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
      CHECK(preds[static_cast<std::size_t>(i)].class_id == arg);
      double total = 0.0;
      for (double p : preds[static_cast<std::size_t>(i)].distribution) total += p;
      CHECK(total == doctest::Approx(1.0));
    } else {
      for (int k = 0; k < 4; ++k) CHECK(preds[static_cast<std::size_t>(i)].raw_box[k] == out[static_cast<std::size_t>(k)]);
    }
  }
}
