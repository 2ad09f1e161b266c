#include <filesystem>
#include <set>

#include "../support/temp_dir.hpp"
#include "chartnet/dataset.hpp"
#include "chartnet/error.hpp"
#include "doctest.h"

using namespace chartnet;
namespace fs = std::filesystem;

namespace {

using chartnet::testing::TempDir;

DatasetConfig small(ChartType type, const fs::path& root) {
  DatasetConfig c;
  c.chart_type = type;
  c.train_charts = 10;
  c.val_charts = 5;
  c.test_charts = 5;
  c.seed = 5;
  c.root = root;
  return c;
}

std::size_t qa_count(const DatasetManifest& m, Split s) {
  std::size_t n = 0;
  for (const auto* r : m.split(s)) n += r->qa_pairs.size();
  return n;
}

}  // namespace

TEST_CASE("small dataset counts, layout and determinism") {
  TempDir a("chartnet_ds_a"), b("chartnet_ds_b");
  for (auto type : {ChartType::Bar, ChartType::Pie}) {
    const auto m = build_dataset(small(type, a.path));
    CHECK(qa_count(m, Split::Train) == 100);
    CHECK(qa_count(m, Split::Val) == 50);
    CHECK(qa_count(m, Split::Test) == 50);
    const fs::path dir = type_dir(a.path, type);
    CHECK(fs::exists(dir / "manifest.jsonl"));
    CHECK(fs::exists(dir / "vocab.json"));
    for (const auto& r : m.records) CHECK(fs::exists(a.path / r.image_path));

    const auto m2 = build_dataset(small(type, b.path));
    CHECK(manifest_hash(a.path, type) == manifest_hash(b.path, type));
    for (std::size_t i = 0; i < m.records.size(); ++i) CHECK(m.records[i].image_hash == m2.records[i].image_hash);

    std::set<std::string> ids;
    std::set<std::uint64_t> hashes;
    for (const auto& r : m.records) {
      ids.insert(r.chart_id);
      hashes.insert(spec_content_hash(r.spec));
    }
    CHECK(ids.size() == m.records.size());
    CHECK(hashes.size() == m.records.size());
  }
}

TEST_CASE("manifest round trip") {
  TempDir d("chartnet_ds_rt");
  const auto m = build_dataset(small(ChartType::Pie, d.path));
  const auto back = read_manifest(d.path, ChartType::Pie);
  CHECK(back.records == m.records);
  CHECK(back.generation_seed == m.generation_seed);
  CHECK(back.config == m.config);
  CHECK_THROWS_AS(read_manifest(d.path, ChartType::Bar), Error);
}

TEST_CASE("vocab is built from train only and is deterministic") {
  TempDir d("chartnet_ds_vocab");
  const auto m = build_dataset(small(ChartType::Bar, d.path));
  const auto v = build_vocab(m);
  CHECK(v.question_tokens[kPad] == "<pad>");
  CHECK(v.question_tokens[kUnk] == "<unk>");
  CHECK(v.question_id("zzzz") == kUnk);
  CHECK(v.answer_id("yes") >= 0);
  CHECK(v.answer_id("no") >= 0);
  CHECK(std::is_sorted(v.answer_tokens.begin(), v.answer_tokens.end()));
  const auto allowed = generic_answer_vocabulary();
  for (const auto& a : v.answer_tokens) CHECK(std::find(allowed.begin(), allowed.end(), a) != allowed.end());
  for (const auto* r : m.split(Split::Train))
    for (const auto& qa : r->qa_pairs)
      for (const auto& t : qa.question.tokens) CHECK(v.question_id(t) != kUnk);
  CHECK(build_vocab(m).hash() == v.hash());
  CHECK(Vocab::load(type_dir(d.path, ChartType::Bar) / "vocab.json").hash() == v.hash());
}

TEST_CASE("load_example encodes images, tokens and targets") {
  TempDir d("chartnet_ds_load");
  const auto m = build_dataset(small(ChartType::Bar, d.path));
  const auto v = build_vocab(m);
  const auto& rec = *m.split(Split::Train).front();
  for (int q = 0; q < 10; ++q) {
    const auto ex = load_example(m, v, rec.chart_id, q);
    CHECK(ex.image.size() == 3u * 224 * 224);
    CHECK(ex.token_ids.size() == 24u);
    CHECK(ex.length == static_cast<int>(rec.qa_pairs[static_cast<std::size_t>(q)].question.tokens.size()));
    for (float x : ex.image) REQUIRE((x >= 0.0f && x <= 1.0f));
    if (ex.kind == AnswerKind::Generic) {
      CHECK(ex.class_id >= 0);
      CHECK(ex.class_id < static_cast<int>(v.answer_tokens.size()));
    } else {
      CHECK(is_valid_box(ex.box));
    }
  }
  ExampleSource src(m, v);
  CHECK(src.example(rec, 3).image == load_example(m, v, rec.chart_id, 3).image);

  std::vector<std::string> long_q(40, "bar");
  const auto ids = encode_question(long_q, v);
  CHECK(ids.size() == 24u);
  CHECK(ids.back() != kPad);

  CHECK_THROWS_AS(load_example(m, v, "nope", 0), Error);
  fs::remove(d.path / rec.image_path);
  try {
    (void)load_example(m, v, rec.chart_id, 0);
    FAIL("expected MissingImage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingImage);
  }
}
