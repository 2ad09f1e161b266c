// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...] [--work DIR]
//
// With no criterion numbers every criterion runs. Exit status is nonzero when
// any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/model_fixtures.hpp"
#include "../support/oracle_checker.hpp"
#include "chartnet/config.hpp"
#include "chartnet/error.hpp"
#include "chartnet/gradcheck.hpp"
#include "chartnet/hash.hpp"
#include "chartnet/train.hpp"

using namespace chartnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_work;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t qa_count(const DatasetManifest& m, Split s) {
  std::size_t n = 0;
  for (const auto* r : m.split(s)) n += r->qa_pairs.size();
  return n;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

// 1. Dataset scale.
Outcome dataset_scale() {
  Outcome o{true, ""};
  for (auto type : {ChartType::Bar, ChartType::Pie}) {
    DatasetConfig full;
    full.chart_type = type;
    full.root = fresh_dir("scale_full");
    const auto t0 = Clock::now();
    const auto m = build_dataset(full);
    const double full_s = seconds_since(t0);
    const bool charts = m.split(Split::Train).size() == 2000 && m.split(Split::Val).size() == 500 &&
                        m.split(Split::Test).size() == 500;
    const bool pairs =
        qa_count(m, Split::Train) == 20000 && qa_count(m, Split::Val) == 5000 && qa_count(m, Split::Test) == 5000;
    fs::remove_all(full.root);

    DatasetConfig desk = full;
    desk.train_charts = 10;
    desk.val_charts = 5;
    desk.test_charts = 5;
    desk.root = fresh_dir("scale_desk");
    const auto t1 = Clock::now();
    const auto d = build_dataset(desk);
    const double desk_s = seconds_since(t1);
    const bool desk_pairs =
        qa_count(d, Split::Train) == 100 && qa_count(d, Split::Val) == 50 && qa_count(d, Split::Test) == 50;
    fs::remove_all(desk.root);

    o.pass = o.pass && charts && pairs && desk_pairs && desk_s < 300.0;
    o.detail += fmt("%s: default %zu/%zu/%zu charts, %zu/%zu/%zu pairs (%.0f s); desk %zu/%zu/%zu pairs (%.2f s). ",
                    std::string(to_string(type)).c_str(), m.split(Split::Train).size(), m.split(Split::Val).size(),
                    m.split(Split::Test).size(), qa_count(m, Split::Train), qa_count(m, Split::Val),
                    qa_count(m, Split::Test), full_s, qa_count(d, Split::Train), qa_count(d, Split::Val),
                    qa_count(d, Split::Test), desk_s);
  }
  return o;
}

// 2. Determinism of generation.
Outcome determinism() {
  Outcome o{true, ""};
  for (auto type : {ChartType::Bar, ChartType::Pie}) {
    DatasetConfig c;
    c.chart_type = type;
    c.train_charts = 60;
    c.val_charts = 20;
    c.test_charts = 20;
    c.seed = 2024;
    c.root = fresh_dir("det_a");
    const auto a = build_dataset(c);
    DatasetConfig c2 = c;
    c2.root = fresh_dir("det_b");
    const auto b = build_dataset(c2);
    const bool manifest = manifest_hash(c.root, type) == manifest_hash(c2.root, type);
    int same = 0;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      const std::string ha = file_hash(c.root / a.records[i].image_path);
      const std::string hb = file_hash(c2.root / b.records[i].image_path);
      if (ha == hb && ha == a.records[i].image_hash) ++same;
    }
    const bool images = same == static_cast<int>(a.records.size());
    o.pass = o.pass && manifest && images;
    o.detail += fmt("%s: manifest %s %s, %d/%zu PNG hashes identical. ", std::string(to_string(type)).c_str(),
                    manifest_hash(c.root, type).c_str(), manifest ? "matches" : "DIFFERS", same, a.records.size());
    fs::remove_all(c.root);
    fs::remove_all(c2.root);
  }
  return o;
}

// 3. Oracle soundness against the brute-force checker: the ten instantiated
// pairs of each spec, then every answerable (template, slot colors)
// combination of the same 1000 specs per type.
Outcome oracle_soundness() {
  Outcome o{true, ""};
  for (auto type : {ChartType::Bar, ChartType::Pie}) {
    int specs = 0, checked = 0, failures = 0;
    std::string first_failure;
    const int colors = static_cast<int>(palette().size());
    for (std::uint64_t seed = 1; specs < 1000; ++seed) {
      const ChartSpec spec = sample_spec(type, derive_seed(7, seed));
      ++specs;
      try {
        for (const auto& qa : instantiate_questions(spec, derive_seed(8, seed))) {
          ++checked;
          const std::string why = chartnet::testing::check_answer(spec, qa);
          if (!why.empty()) {
            ++failures;
            if (first_failure.empty()) first_failure = qa.question.template_id + ": " + why;
          }
        }
      } catch (const Error&) {
        // Specs with too few elements for some template; covered below.
      }
      for (const auto& t : templates(type)) {
        std::vector<std::vector<int>> slot_sets;
        if (t.slots == 0) slot_sets.push_back({});
        for (int x = 0; t.slots >= 1 && x < colors; ++x) {
          if (t.slots == 1) slot_sets.push_back({x});
          for (int y = 0; t.slots == 2 && y < colors; ++y) slot_sets.push_back({x, y});
        }
        for (const auto& slots : slot_sets) {
          // The two membership templates differ only in which colors they are
          // instantiated with: present ones for "yes", absent ones for "no".
          if (t.id.ends_with("exists_yes") || t.id.ends_with("exists_no")) {
            bool present = false;
            for (const auto& e : chartnet::testing::elements_of(spec))
              present = present || e.color == palette()[static_cast<std::size_t>(slots[0])].name;
            if (present != t.id.ends_with("exists_yes")) continue;
          }
          QAPair qa;
          qa.question = make_question(t.id, slots);
          try {
            qa.answer = oracle_answer(spec, qa.question);
          } catch (const Error&) {
            continue;  // template does not apply to these slots
          }
          ++checked;
          const std::string why = chartnet::testing::check_answer(spec, qa);
          if (!why.empty()) {
            ++failures;
            if (first_failure.empty()) first_failure = t.id + ": " + why;
          }
        }
      }
    }
    o.pass = o.pass && failures == 0 && checked > 0;
    o.detail += fmt("%s: %d specs, %d answers checked, %d failures%s%s. ", std::string(to_string(type)).c_str(), specs,
                    checked, failures, first_failure.empty() ? "" : " first: ", first_failure.c_str());
  }
  return o;
}

// 4. Gradient fidelity at toy scale.
Outcome gradient_fidelity() {
  ChartNetModel<double> model(chartnet::testing::toy_config());
  const auto image = chartnet::testing::random_image<double>(16, 21);
  const auto t0 = Clock::now();
  const auto r = gradient_check(
      [&](nn::Graph<double>& g) { return chartnet::testing::toy_objective(model, g, image); }, model.params(), 1e-3,
      true);
  const double s = seconds_since(t0);
  return {r.max_relative_error < 1e-4 && s < 60.0 && r.coordinates == model.params().scalar_count(),
          fmt("max relative error %.2e over %zu coordinates (worst %s[%zu]), %.1f s", r.max_relative_error,
              r.coordinates, r.worst_parameter.c_str(), r.worst_index, s)};
}

// 5. Attention normalization at desk dims.
Outcome attention_normalization() {
  ChartNetModel<float> model(chartnet::testing::desk_config(ModelKind::ChartNet));
  double worst = 0.0, min_value = 1.0;
  int distributions = 0;
  for (int pass = 0; pass < 100; ++pass) {
    nn::Graph<float> g;
    nn::NoGradScope<float> no_grad(g);
    Trace trace;
    const auto enc = model.encode_image(g, chartnet::testing::random_image<float>(224, 500 + pass));
    const auto tokens = chartnet::testing::random_tokens(3 + pass % 20, 40, 900 + pass);
    model.forward(g, enc, tokens, pass % 2 ? AnswerKind::Generic : AnswerKind::ChartSpecific, &trace);
    for (const auto* set : {&trace.word_attention, &trace.spatial_attention})
      for (const auto& a : *set) {
        double s = 0.0;
        for (double x : a) {
          s += x;
          min_value = std::min(min_value, x);
        }
        worst = std::max(worst, std::abs(s - 1.0));
        ++distributions;
      }
  }
  const int expected = 100 * 2 * model.config().steps;
  return {worst <= 1e-5 && min_value >= 0.0 && distributions == expected,
          fmt("%d distributions, max |sum - 1| = %.2e, min entry %.2e", distributions, worst, min_value)};
}

// Small desk dataset shared by the overfit fixtures.
struct Fixture {
  DatasetManifest manifest;
  Vocab vocab;
};

Fixture overfit_dataset(ChartType type, const std::string& name) {
  DatasetConfig c;
  c.chart_type = type;
  c.train_charts = 10;
  c.val_charts = 1;
  c.test_charts = 1;
  c.seed = 31;
  c.root = fresh_dir(name);
  Fixture f{build_dataset(c), {}};
  f.vocab = build_vocab(f.manifest);
  return f;
}

ExperimentConfig overfit_config(const std::string& file) {
  return load_config(fs::path(CHARTNET_CONFIG_DIR) / file);
}

Metrics score(Model<float>& model, const ExampleSource& source, const std::vector<ExampleRef>& examples) {
  ModelPredictor predictor(model, source);
  MetricsAccumulator acc;
  std::map<const ChartRecord*, std::vector<int>> by_chart;
  for (const auto& e : examples) by_chart[e.record].push_back(e.qa_index);
  for (const auto& [rec, qa] : by_chart) {
    const auto preds = predictor.predict(*rec, qa);
    for (std::size_t i = 0; i < qa.size(); ++i) {
      const ModelExample ex = source.example(*rec, qa[i], false);
      acc.add(ex.template_id, preds[i], target_of(ex));
    }
  }
  return acc.finish();
}

Outcome overfit(AnswerKind kind, std::size_t count, const std::string& config_file) {
  const ExperimentConfig cfg = overfit_config(config_file);
  const Fixture f = overfit_dataset(cfg.dataset.chart_type, "overfit");
  ModelConfig mc = cfg.model;
  mc.question_vocab = static_cast<int>(f.vocab.question_tokens.size());
  mc.answer_vocab = static_cast<int>(f.vocab.answer_tokens.size());
  auto model = make_model<float>(mc);
  std::vector<ExampleRef> examples;
  for (const auto& e : training_examples(f.manifest, Split::Train, *model, TrainSubset::All))
    if (e.record->qa_pairs[static_cast<std::size_t>(e.qa_index)].answer.kind == kind && examples.size() < count)
      examples.push_back(e);
  if (examples.size() != count) return {false, fmt("fixture has only %zu examples", examples.size())};

  ExampleSource source(f.manifest, f.vocab, mc.input_resolution);
  TrainOptions opt;
  opt.hyper = cfg.train;
  opt.hyper.validate = false;
  opt.examples = examples;
  double best = 0.0;
  int reached = 0;
  const auto t0 = Clock::now();
  const double target = kind == AnswerKind::Generic ? 0.95 : 0.9;
  opt.stop = [&](const EpochRecord& r) {
    const Metrics m = score(*model, source, examples);
    const double v = kind == AnswerKind::Generic ? m.generic_accuracy : m.mean_iou;
    best = std::max(best, v);
    if (v >= target && reached == 0) reached = r.epoch;
    return reached > 0 || seconds_since(t0) > 900.0;
  };
  const auto result = train(*model, source, opt);
  const double s = seconds_since(t0);
  fs::remove_all(f.manifest.root);
  const int epochs = static_cast<int>(result.history.size());
  const char* what = kind == AnswerKind::Generic ? "train accuracy" : "mean train IoU";
  return {reached > 0 && reached <= cfg.train.epochs && s < 900.0,
          fmt("%zu examples, %s %.3f (target %.2f) %s after %d epochs, %.0f s", count, what, best, target,
              reached > 0 ? "reached" : "not reached", epochs, s)};
}

// 9. Trend reproduction on pie charts with the desk backbone.
Outcome trend() {
  const ExperimentConfig base = overfit_config("desk_pie_trend.json");
  DatasetConfig dc = base.dataset;
  dc.root = fresh_dir("trend");
  const auto t0 = Clock::now();
  const auto manifest = build_dataset(dc);
  const Vocab vocab = build_vocab(manifest);
  std::map<ModelKind, double> acc;
  std::string detail;
  for (auto kind : {ModelKind::LstmOnly, ModelKind::CnnLstmSa, ModelKind::ChartNet}) {
    ModelConfig mc = base.model;
    mc.kind = kind;
    mc.question_vocab = static_cast<int>(vocab.question_tokens.size());
    mc.answer_vocab = static_cast<int>(vocab.answer_tokens.size());
    auto model = make_model<float>(mc);
    ExampleSource source(manifest, vocab, mc.input_resolution);
    TrainOptions opt;
    opt.hyper = base.train;
    const auto t1 = Clock::now();
    const auto r = train(*model, source, opt);
    ModelPredictor predictor(*model, source);
    const Metrics m = evaluate(predictor, manifest, vocab, Split::Test);
    acc[kind] = m.generic_accuracy;
    detail += fmt("%s %.1f%% (best epoch %d, %.0f s); ", std::string(to_string(kind)).c_str(),
                  100.0 * m.generic_accuracy, r.best_epoch, seconds_since(t1));
  }
  const double s = seconds_since(t0);
  fs::remove_all(dc.root);
  const double cn = acc[ModelKind::ChartNet], sa = acc[ModelKind::CnnLstmSa], lstm = acc[ModelKind::LstmOnly];
  const bool order = cn > sa && sa > lstm;
  const bool gap = cn - lstm >= 0.20;
  return {order && gap && s <= 7200.0,
          detail + fmt("%zu train charts, ordering %s, gap %.1f points, total %.0f s",
                       manifest.split(Split::Train).size(), order ? "holds" : "FAILS", 100.0 * (cn - lstm), s)};
}

// 10. The LSTM-only baseline ignores the image bit for bit.
Outcome image_independence() {
  auto model = make_model<float>(chartnet::testing::desk_config(ModelKind::LstmOnly));
  int identical = 0, trials = 0;
  for (int q = 0; q < 20; ++q) {
    const auto tokens = chartnet::testing::random_tokens(4 + q % 10, 40, 300 + q);
    std::vector<float> first;
    for (int i = 0; i < 5; ++i) {
      nn::Graph<float> g;
      const auto enc = model->encode_image(g, chartnet::testing::random_image<float>(224, 1000 * q + i));
      const auto out = model->forward(g, enc, tokens, AnswerKind::Generic).value().storage();
      if (i == 0) first = out;
      ++trials;
      if (out == first) ++identical;
    }
  }
  return {identical == trials, fmt("%d/%d outputs bitwise identical across images", identical, trials)};
}

// 8. IoU unit suite.
Outcome iou_suite() {
  const NormBBox a{0.0, 0.0, 0.2, 0.2}, b{0.1, 0.1, 0.3, 0.3}, far{0.5, 0.5, 0.9, 0.8};
  const double same = iou(b, b), disjoint = iou(a, far), hand = iou(a, b);
  return {same == 1.0 && disjoint == 0.0 && std::abs(hand - 1.0 / 7.0) <= 1e-12,
          fmt("identity %.17g, disjoint %.17g, hand case %.17g (|err| %.1e)", same, disjoint, hand,
              std::abs(hand - 1.0 / 7.0))};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_work = fs::temp_directory_path() / "chartnet_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc)
      g_work = argv[++i];
    else
      selected.insert(std::stoi(a));
  }
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria = {
      {1, "dataset scale", dataset_scale},
      {2, "generation determinism", determinism},
      {3, "oracle soundness", oracle_soundness},
      {4, "gradient fidelity", gradient_fidelity},
      {5, "attention normalization", attention_normalization},
      {6, "overfit (classification)", [] { return overfit(AnswerKind::Generic, 50, "desk_overfit_generic.json"); }},
      {7, "overfit (regression)", [] { return overfit(AnswerKind::ChartSpecific, 20, "desk_overfit_box.json"); }},
      {8, "IoU unit suite", iou_suite},
      {9, "pie trend vs baselines", trend},
      {10, "LSTM-only image independence", image_independence},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s  %2d  %-30s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
