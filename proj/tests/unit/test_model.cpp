#include <chrono>
#include <cmath>
#include <numeric>

#include "../support/model_fixtures.hpp"
#include "chartnet/error.hpp"
#include "chartnet/gradcheck.hpp"
#include "chartnet/model.hpp"
#include "doctest.h"

using namespace chartnet;
using namespace chartnet::nn;
using chartnet::testing::desk_config;
using chartnet::testing::random_image;
using chartnet::testing::random_tokens;
using chartnet::testing::toy_config;

namespace {

using D = double;

void set(ParameterStore<D>& s, const std::string& name, std::vector<double> values) {
  auto& p = s.get(name);
  REQUIRE(p.value.size() == values.size());
  p.value.storage() = std::move(values);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_distribution(const std::vector<double>& p) {
  CHECK(std::abs(sum(p) - 1.0) < 1e-5);
  for (double x : p) CHECK(x >= 0.0);
}

std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> e;
  double total = 0.0;
  for (double v : z) {
    e.push_back(std::exp(v - mx));
    total += e.back();
  }
  for (double& v : e) v /= total;
  return e;
}

// Row-vector times in x out matrix, in plain loops.
std::vector<double> vecmat(const std::vector<double>& x, const Tensor<D>& w) {
  std::vector<double> y(static_cast<std::size_t>(w.cols()), 0.0);
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) y[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i)] * w.at(i, j);
  return y;
}

// Matrix times column vector.
std::vector<double> matvec(const Tensor<D>& w, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) y[static_cast<std::size_t>(i)] += w.at(i, j) * x[static_cast<std::size_t>(j)];
  return y;
}

std::vector<double> row_of(const Tensor<D>& t, int r) {
  return std::vector<double>(t.data() + static_cast<std::size_t>(r) * t.cols(),
                             t.data() + static_cast<std::size_t>(r + 1) * t.cols());
}

struct CellFixture {
  ParameterStore<D> store;
  MacCell<D> cell;
  CellFixture(int D_, int kb_depth, int steps, std::uint64_t seed = 3) {
    Rng rng(seed);
    cell = MacCell<D>(store, D_, kb_depth, steps, rng);
  }
};

}  // namespace

TEST_CASE("desk backbone yields a 14x14x64 knowledge base") {
  const auto cfg = desk_config(ModelKind::ChartNet);
  CHECK(cfg.kb_side() == 14);
  ChartNetModel<float> model(cfg);
  Graph<float> g;
  const auto enc = model.encode_image(g, random_image<float>(224, 1));
  CHECK(enc.kb.shape() == std::vector<int>{196, 64});
  CHECK(enc.side == 14);

  SUBCASE("zero image stays finite") {
    Graph<float> g2;
    const auto z = model.encode_image(g2, Tensor<float>({3, 224, 224}));
    for (float v : z.kb.value().storage()) CHECK(std::isfinite(v));
  }
  SUBCASE("identical images give identical knowledge bases") {
    Graph<float> g2;
    const auto again = model.encode_image(g2, random_image<float>(224, 1));
    CHECK(again.kb.value().storage() == enc.kb.value().storage());
  }
  SUBCASE("wrong resolution") {
    Graph<float> g2;
    CHECK_THROWS_AS(model.encode_image(g2, random_image<float>(112, 1)), Error);
  }
}

TEST_CASE("pretrained adapter consumes precomputed 14x14 feature maps") {
  auto cfg = desk_config(ModelKind::ChartNet);
  cfg.backbone = BackboneKind::PretrainedAdapter;
  cfg.adapter_channels = 16;
  ChartNetModel<float> model(cfg);
  Graph<float> g;
  const auto enc = model.encode_image(g, random_image<float>(14, 2, 16));
  CHECK(enc.kb.shape() == std::vector<int>{196, 64});
  CHECK_THROWS_AS(model.encode_image(g, random_image<float>(224, 2)), Error);
}

TEST_CASE("question encoder") {
  ParameterStore<D> store;
  ModelConfig cfg = toy_config();
  Rng rng(4);
  QuestionEncoder<D> enc(store, cfg, rng);
  const int h = cfg.hidden;

  SUBCASE("shapes follow the unpadded length") {
    Graph<D> g;
    const auto qe = enc(g, std::vector<int>{2, 3, 4, 0, 0});
    CHECK(qe.words.shape() == std::vector<int>{3, 2 * h});
    CHECK(qe.q.shape() == std::vector<int>{1, 2 * h});
    // q = [final backward ; final forward]
    for (int j = 0; j < h; ++j) {
      CHECK(qe.q.value().at(0, j) == qe.words.value().at(0, j));
      CHECK(qe.q.value().at(0, h + j) == qe.words.value().at(2, h + j));
    }
  }
  SUBCASE("single token: contextual word halves equal the question halves") {
    Graph<D> g;
    const auto qe = enc(g, std::vector<int>{5});
    CHECK(qe.words.value().storage() == qe.q.value().storage());
  }
  SUBCASE("appending padding changes nothing") {
    Graph<D> g;
    const auto a = enc(g, std::vector<int>{2, 6, 3});
    const auto b = enc(g, std::vector<int>{2, 6, 3, 0, 0, 0, 0});
    CHECK(a.words.value().storage() == b.words.value().storage());
    CHECK(a.q.value().storage() == b.q.value().storage());
  }
  SUBCASE("all padding is an empty question") {
    Graph<D> g;
    try {
      enc(g, std::vector<int>{0, 0, 0});
      FAIL("expected EmptyQuestion");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyQuestion);
    }
  }
  SUBCASE("ids outside the vocabulary") {
    Graph<D> g;
    CHECK_THROWS_AS(enc(g, std::vector<int>{2, 99}), Error);
  }
}

TEST_CASE("control unit") {
  SUBCASE("hand-computed fixture at d=2, S=2") {
    CellFixture f(2, 2, 1);
    set(f.store, "mac.control.q0.w", {1, 0, 0, 1});
    set(f.store, "mac.control.q0.b", {0, 0});
    set(f.store, "mac.control.cq.w", {1, 0, 0, 1, 1, 0, 0, 1});  // cq = c_prev + q_i
    set(f.store, "mac.control.cq.b", {0, 0});
    set(f.store, "mac.control.attn", {1, 1});
    Graph<D> g;
    auto [c, attn] = f.cell.control(g.constant(Tensor<D>::row({0.5, 0.0})), g.constant(Tensor<D>::row({0.0, 0.5})),
                                    g.constant(Tensor<D>({2, 2}, {1, 0, 0, 2})), 0);
    // logits (0.5, 1.0)
    const double a0 = 1.0 / (1.0 + std::exp(0.5));
    CHECK(attn.value()[0] == doctest::Approx(a0).epsilon(1e-14));
    CHECK(attn.value()[1] == doctest::Approx(1.0 - a0).epsilon(1e-14));
    CHECK(c.value()[0] == doctest::Approx(a0).epsilon(1e-14));
    CHECK(c.value()[1] == doctest::Approx(2.0 * (1.0 - a0)).epsilon(1e-14));
  }
  SUBCASE("one word receives all attention") {
    CellFixture f(4, 3, 2);
    Graph<D> g;
    const Tensor<D> cw = Tensor<D>::row({0.3, -1.0, 2.0, 0.5});
    auto [c, attn] = f.cell.control(f.cell.initial_control(g), g.constant(Tensor<D>::row({1, 2, 3, 4})),
                                    g.constant(cw), 1);
    CHECK(attn.value().storage() == std::vector<double>{1.0});
    CHECK(c.value().storage() == cw.storage());
  }
  SUBCASE("identical words share attention equally") {
    CellFixture f(4, 3, 2);
    Graph<D> g;
    auto [c, attn] = f.cell.control(f.cell.initial_control(g), g.constant(Tensor<D>::row({1, 2, 3, 4})),
                                    g.constant(Tensor<D>({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4})), 0);
    CHECK(attn.value()[0] == doctest::Approx(0.5));
    CHECK(attn.value()[1] == doctest::Approx(0.5));
  }
  SUBCASE("step outside [0, p)") {
    CellFixture f(2, 2, 2);
    Graph<D> g;
    CHECK_THROWS_AS(f.cell.control(f.cell.initial_control(g), f.cell.initial_control(g),
                                   g.constant(Tensor<D>::row({1, 1})), 2),
                    Error);
  }
}

TEST_CASE("read unit") {
  SUBCASE("hand-computed fixture on a 2x2x2 knowledge base") {
    CellFixture f(2, 2, 1);
    set(f.store, "mac.read.k.w", {1, 0, 0, 1});
    set(f.store, "mac.read.k.b", {0, 0});
    set(f.store, "mac.read.m.w", {1, 0, 0, 1});
    set(f.store, "mac.read.m.b", {0, 0});
    set(f.store, "mac.read.interaction", {1, 0, 0, 1});
    set(f.store, "mac.read.direct", {0, 0, 0, 0});
    set(f.store, "mac.read.attn", {1, 1});
    // With m = (1, 1) and c = (1, 0) the logit of a cell is its first feature,
    // so logs of 1..4 give attention 0.1..0.4.
    const Tensor<D> kb({4, 2}, {0.0, 1.0, std::log(2.0), 0.0, std::log(3.0), 0.0, std::log(4.0), 1.0});
    Graph<D> g;
    Var<D> proj = f.cell.project_knowledge(g.constant(kb));
    auto [r, rv] = f.cell.read(g.constant(Tensor<D>::row({1, 1})), g.constant(Tensor<D>::row({1, 0})), proj);
    const std::vector<double> want = {0.1, 0.2, 0.3, 0.4};
    for (int i = 0; i < 4; ++i) CHECK(rv.value()[static_cast<std::size_t>(i)] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-13));
    CHECK(r.value()[0] == doctest::Approx(0.2 * std::log(2.0) + 0.3 * std::log(3.0) + 0.4 * std::log(4.0)).epsilon(1e-13));
    CHECK(r.value()[1] == doctest::Approx(0.5).epsilon(1e-13));
  }

  SUBCASE("random parameters agree with a per-cell brute-force evaluation") {
    const int Dm = 3, d = 2, HW = 4;
    CellFixture f(Dm, d, 1, 17);
    Rng rng(8);
    Tensor<D> kb({HW, d});
    for (auto& v : kb.storage()) v = rng.uniform(-1, 1);
    const std::vector<double> m = {0.4, -0.2, 0.9}, c = {-0.5, 1.2, 0.3};
    Graph<D> g;
    auto [r, rv] = f.cell.read(g.constant(Tensor<D>::row(m)), g.constant(Tensor<D>::row(c)),
                               f.cell.project_knowledge(g.constant(kb)));

    const auto& P = f.store;
    std::vector<double> mh = vecmat(m, P.find("mac.read.m.w")->value);
    for (int j = 0; j < Dm; ++j) mh[static_cast<std::size_t>(j)] += P.find("mac.read.m.b")->value[static_cast<std::size_t>(j)];
    std::vector<std::vector<double>> cells;
    std::vector<double> logits;
    for (int n = 0; n < HW; ++n) {
      std::vector<double> k = vecmat(row_of(kb, n), P.find("mac.read.k.w")->value);
      for (int j = 0; j < Dm; ++j) k[static_cast<std::size_t>(j)] += P.find("mac.read.k.b")->value[static_cast<std::size_t>(j)];
      std::vector<double> inter(static_cast<std::size_t>(Dm));
      for (int j = 0; j < Dm; ++j) inter[static_cast<std::size_t>(j)] = k[static_cast<std::size_t>(j)] * mh[static_cast<std::size_t>(j)];
      const auto a = matvec(P.find("mac.read.interaction")->value, inter);
      const auto b = matvec(P.find("mac.read.direct")->value, k);
      double logit = 0.0;
      for (int j = 0; j < Dm; ++j) {
        const auto J = static_cast<std::size_t>(j);
        logit += P.find("mac.read.attn")->value[J] * c[J] * (a[J] + b[J]);
      }
      logits.push_back(logit);
      cells.push_back(k);
    }
    const auto want = softmax(logits);
    std::vector<double> want_r(static_cast<std::size_t>(Dm), 0.0);
    for (int n = 0; n < HW; ++n)
      for (int j = 0; j < Dm; ++j)
        want_r[static_cast<std::size_t>(j)] += want[static_cast<std::size_t>(n)] * cells[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)];
    for (int n = 0; n < HW; ++n) CHECK(rv.value()[static_cast<std::size_t>(n)] == doctest::Approx(want[static_cast<std::size_t>(n)]).epsilon(1e-12));
    for (int j = 0; j < Dm; ++j) CHECK(r.value()[static_cast<std::size_t>(j)] == doctest::Approx(want_r[static_cast<std::size_t>(j)]).epsilon(1e-12));
  }

  SUBCASE("identical cells give uniform attention") {
    CellFixture f(4, 3, 1);
    Tensor<D> kb({9, 3});
    for (int n = 0; n < 9; ++n) {
      kb.at(n, 0) = 0.3;
      kb.at(n, 1) = -0.7;
      kb.at(n, 2) = 1.1;
    }
    Graph<D> g;
    auto [r, rv] = f.cell.read(g.constant(Tensor<D>::row({1, 2, 3, 4})), g.constant(Tensor<D>::row({-1, 0, 1, 2})),
                               f.cell.project_knowledge(g.constant(kb)));
    for (double v : rv.value().storage()) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
  }

  SUBCASE("permuting cells permutes attention and leaves the result unchanged") {
    CellFixture f(4, 3, 1);
    Rng rng(12);
    Tensor<D> kb({6, 3});
    for (auto& v : kb.storage()) v = rng.uniform(-1, 1);
    const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Tensor<D> shuffled({6, 3});
    for (int n = 0; n < 6; ++n)
      for (int j = 0; j < 3; ++j) shuffled.at(n, j) = kb.at(perm[static_cast<std::size_t>(n)], j);
    Graph<D> g;
    const Tensor<D> m = Tensor<D>::row({0.2, -0.4, 0.6, 0.1}), c = Tensor<D>::row({1.0, 0.5, -0.5, 0.3});
    auto [r1, rv1] = f.cell.read(g.constant(m), g.constant(c), f.cell.project_knowledge(g.constant(kb)));
    auto [r2, rv2] = f.cell.read(g.constant(m), g.constant(c), f.cell.project_knowledge(g.constant(shuffled)));
    for (int n = 0; n < 6; ++n)
      CHECK(rv2.value()[static_cast<std::size_t>(n)] == doctest::Approx(rv1.value()[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)])]).epsilon(1e-14));
    for (int j = 0; j < 4; ++j) CHECK(r2.value()[static_cast<std::size_t>(j)] == doctest::Approx(r1.value()[static_cast<std::size_t>(j)]).epsilon(1e-13));
  }
}

TEST_CASE("write unit") {
  CellFixture f(2, 2, 1);
  Graph<D> g;
  const Tensor<D> r = Tensor<D>::row({1, 2}), m = Tensor<D>::row({3, 4});
  set(f.store, "mac.write.b", {0, 0});
  SUBCASE("select the retrieved vector") {
    set(f.store, "mac.write.w", {1, 0, 0, 1, 0, 0, 0, 0});
    CHECK(f.cell.write(g.constant(m), g.constant(r)).value().storage() == r.storage());
  }
  SUBCASE("select the previous memory") {
    set(f.store, "mac.write.w", {0, 0, 0, 0, 1, 0, 0, 1});
    CHECK(f.cell.write(g.constant(m), g.constant(r)).value().storage() == m.storage());
  }
  SUBCASE("hand-computed 2x4 product") {
    set(f.store, "mac.write.w", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    set(f.store, "mac.write.b", {0.01, 0.02});
    const auto out = f.cell.write(g.constant(m), g.constant(r)).value();
    CHECK(out[0] == doctest::Approx(5.01).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(6.02).epsilon(1e-14));
  }
}

TEST_CASE("MAC traces and output heads") {
  auto cfg = toy_config();
  SUBCASE("one trace entry per step") {
    for (int p : {1, 4}) {
      cfg.steps = p;
      ChartNetModel<D> model(cfg);
      Graph<D> g;
      Trace trace;
      const auto enc = model.encode_image(g, random_image<D>(16, 3));
      model.forward(g, enc, std::vector<int>{2, 3}, AnswerKind::Generic, &trace);
      CHECK(trace.word_attention.size() == static_cast<std::size_t>(p));
      CHECK(trace.spatial_attention.size() == static_cast<std::size_t>(p));
      for (const auto& a : trace.word_attention) CHECK(a.size() == 2);
      for (const auto& a : trace.spatial_attention) CHECK(a.size() == 16);
    }
  }
  SUBCASE("heads") {
    ChartNetModel<D> model(cfg);
    Graph<D> g;
    const auto enc = model.encode_image(g, random_image<D>(16, 3));
    const auto logits = model.forward(g, enc, std::vector<int>{2, 3, 4}, AnswerKind::Generic);
    CHECK(logits.shape() == std::vector<int>{1, 4});
    check_distribution(softmax(logits.value().storage()));
    const auto box = model.forward(g, enc, std::vector<int>{2, 3, 4}, AnswerKind::ChartSpecific);
    CHECK(box.shape() == std::vector<int>{1, 4});
    for (double v : box.value().storage()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("zero classifier weights give a uniform distribution") {
    ChartNetModel<D> model(cfg);
    model.params().get("head.cls2.w").value.fill(0.0);
    model.params().get("head.cls2.b").value.fill(0.0);
    Graph<D> g;
    const auto enc = model.encode_image(g, random_image<D>(16, 3));
    for (double p : softmax(model.forward(g, enc, std::vector<int>{2}, AnswerKind::Generic).value().storage()))
      CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  }
}

TEST_CASE("attention stays normalized at desk dims") {
  ChartNetModel<float> model(desk_config(ModelKind::ChartNet));
  for (int pass = 0; pass < 3; ++pass) {
    Graph<float> g;
    Trace trace;
    const auto enc = model.encode_image(g, random_image<float>(224, 40 + static_cast<std::uint64_t>(pass)));
    model.forward(g, enc, random_tokens(5 + pass, 40, static_cast<std::uint64_t>(pass)), AnswerKind::Generic, &trace);
    CHECK(trace.word_attention.size() == 6);
    for (const auto& a : trace.word_attention) check_distribution(a);
    for (const auto& a : trace.spatial_attention) check_distribution(a);
  }
}

// Control-path gradients of the toy model are around 1e-9, below what a plain
// 1e-5 central difference resolves against an O(1) loss, so the check uses the
// extrapolated difference with a larger step.
TEST_CASE("toy ChartNet gradient matches central differences") {
  ChartNetModel<D> model(toy_config());
  const auto image = random_image<D>(16, 21);
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = gradient_check(
      [&](Graph<D>& g) { return chartnet::testing::toy_objective(model, g, image); }, model.params(), 1e-3, true);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CAPTURE(report.worst_parameter);
  CAPTURE(report.worst_index);
  CAPTURE(report.worst_analytic);
  CAPTURE(report.worst_numeric);
  CAPTURE(secs);
  CHECK(report.coordinates == model.params().scalar_count());
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("baselines") {
  for (auto kind : {ModelKind::LstmOnly, ModelKind::CnnLstm, ModelKind::CnnLstmSa}) {
    CAPTURE(to_string(kind));
    auto model = make_model<D>(toy_config(kind));
    CHECK_FALSE(model->has_box_head());
    Graph<D> g;
    const auto enc = model->encode_image(g, random_image<D>(16, 9));
    Trace trace;
    const auto logits = model->forward(g, enc, std::vector<int>{2, 4}, AnswerKind::Generic, &trace);
    CHECK(logits.shape() == std::vector<int>{1, 4});
    check_distribution(softmax(logits.value().storage()));
    CHECK_THROWS_AS(model->forward(g, enc, std::vector<int>{2, 4}, AnswerKind::ChartSpecific), Error);
    if (kind == ModelKind::CnnLstmSa) {
      CHECK(trace.spatial_attention.size() == 2);
      for (const auto& a : trace.spatial_attention) check_distribution(a);
    }
    if (kind != ModelKind::LstmOnly) {
      try {
        model->forward(g, ImageEncoding<D>{}, std::vector<int>{2}, AnswerKind::Generic);
        FAIL("expected MissingImage");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingImage);
      }
    }
  }

  SUBCASE("question-only output ignores the image") {
    auto model = make_model<float>(desk_config(ModelKind::LstmOnly));
    CHECK_FALSE(model->uses_image());
    Graph<float> g;
    const auto a = model->forward(g, model->encode_image(g, random_image<float>(224, 1)), std::vector<int>{3, 7, 9},
                                  AnswerKind::Generic);
    const auto b = model->forward(g, model->encode_image(g, random_image<float>(224, 2)), std::vector<int>{3, 7, 9},
                                  AnswerKind::Generic);
    CHECK(a.value().storage() == b.value().storage());
  }

  SUBCASE("baseline gradients") {
    for (auto kind : {ModelKind::LstmOnly, ModelKind::CnnLstm, ModelKind::CnnLstmSa}) {
      auto model = make_model<D>(toy_config(kind));
      const auto image = random_image<D>(16, 4);
      const auto report = gradient_check(
          [&](Graph<D>& g) {
            const auto enc = model->encode_image(g, image);
            return softmax_cross_entropy(model->forward(g, enc, std::vector<int>{2, 5, 3}, AnswerKind::Generic), 1);
          },
          model->params(), 1e-3, true);
      CAPTURE(to_string(kind));
      CAPTURE(report.worst_parameter);
      CHECK(report.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("model config round trip and decode_box") {
  auto cfg = toy_config(ModelKind::CnnLstmSa);
  cfg.backbone = BackboneKind::PretrainedAdapter;
  const auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json{{"kind", "mlp"}}), Error);

  bool repaired = true;
  auto b = decode_box({0.1, 0.2, 0.3, 0.4}, &repaired);
  CHECK_FALSE(repaired);
  b = decode_box({0.3, 0.4, 0.1, 0.2}, &repaired);
  CHECK(repaired);
  CHECK(b.x_min == 0.1);
  CHECK(b.y_max == 0.4);
}
