#include "chartnet/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "chartnet/error.hpp"
#include "chartnet/hash.hpp"
#include "chartnet/rng.hpp"

namespace chartnet {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::InvalidConfig, "unknown split '" + std::string(s) + "'");
}

nlohmann::json DatasetConfig::to_json() const {
  return {{"chart_type", to_string(chart_type)},
          {"train_charts", train_charts},
          {"val_charts", val_charts},
          {"test_charts", test_charts},
          {"seed", seed},
          {"render_resolution", render_resolution},
          {"min_elements", constraints.min_elements},
          {"max_elements", constraints.max_elements},
          {"min_height", constraints.min_height},
          {"height_epsilon", constraints.height_epsilon},
          {"angle_epsilon", constraints.angle_epsilon},
          {"min_sector_angle", constraints.min_sector_angle},
          {"min_class_count", min_class_count},
          {"balance_check_min_charts", balance_check_min_charts}};
}

std::vector<const ChartRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ChartRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

const ChartRecord& DatasetManifest::find(const std::string& chart_id) const {
  for (const auto& r : records)
    if (r.chart_id == chart_id) return r;
  throw Error(ErrorCode::CorruptManifest, "no chart with id " + chart_id);
}

fs::path type_dir(const fs::path& root, ChartType type) { return root / std::string(to_string(type)); }

namespace {

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingImage, "cannot read " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fnv1a h;
  h.update(std::string_view(buf.data(), buf.size()));
  return hex64(h.digest());
}

std::string chart_id_for(ChartType type, Split s, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%s-%05d", std::string(to_string(type)).c_str(), std::string(to_string(s)).c_str(), i);
  return buf;
}

// Specs and questions for every split, without pixels.
std::vector<ChartRecord> plan_records(const DatasetConfig& cfg, std::uint64_t base) {
  std::vector<ChartRecord> out;
  std::set<std::uint64_t> seen;  // content hashes, for split disjointness
  const std::pair<Split, int> splits[] = {
      {Split::Train, cfg.train_charts}, {Split::Val, cfg.val_charts}, {Split::Test, cfg.test_charts}};
  for (auto [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      ChartRecord rec;
      rec.chart_id = chart_id_for(cfg.chart_type, split, i);
      rec.split = split;
      rec.image_path = std::string(to_string(cfg.chart_type)) + "/images/" + rec.chart_id + ".png";
      const std::uint64_t slot = (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint64_t>(i);
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 10000)
          throw Error(ErrorCode::InfeasibleConstraints, "could not instantiate all templates for " + rec.chart_id);
        const std::uint64_t spec_seed = derive_seed(base, slot, attempt);
        auto spec = sample_spec(cfg.chart_type, spec_seed, cfg.constraints);
        if (seen.count(spec_content_hash(spec))) continue;
        try {
          rec.qa_pairs = instantiate_questions(spec, derive_seed(spec_seed, 1), rec.chart_id, cfg.render_resolution);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::TemplateInapplicable || e.code() == ErrorCode::UnansweredComposite) continue;
          throw;
        }
        seen.insert(spec_content_hash(spec));
        rec.annotations = annotate(spec, cfg.render_resolution);
        rec.spec = std::move(spec);
        break;
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

bool balanced(const std::vector<ChartRecord>& records, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& r : records)
    if (r.split == Split::Train)
      for (const auto& qa : r.qa_pairs)
        if (qa.answer.kind == AnswerKind::Generic) ++counts[qa.answer.generic_token];
  return std::all_of(counts.begin(), counts.end(), [&](const auto& kv) { return kv.second >= min_count; });
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& cfg) {
  if (cfg.train_charts < 1 || cfg.val_charts < 1 || cfg.test_charts < 1)
    throw Error(ErrorCode::InvalidConfig, "every split needs at least one chart");

  DatasetManifest m;
  m.chart_type = cfg.chart_type;
  m.generation_seed = cfg.seed;
  m.render_resolution = cfg.render_resolution;
  m.config = cfg.to_json();
  m.root = cfg.root;

  const bool check_balance = cfg.train_charts >= cfg.balance_check_min_charts;
  for (int regen = 0;; ++regen) {
    const std::uint64_t base = derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.chart_type) + 1, regen);
    m.records = plan_records(cfg, base);
    m.balance_regenerations = regen;
    if (!check_balance || balanced(m.records, cfg.min_class_count)) break;
    if (regen >= 100) throw Error(ErrorCode::InfeasibleConstraints, "class balance not reached after 100 regenerations");
  }

  const fs::path dir = type_dir(cfg.root, cfg.chart_type);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + (dir / "images").string() + ": " + ec.message());
  for (auto& rec : m.records) {
    const fs::path path = cfg.root / rec.image_path;
    write_png(path, render(rec.spec, cfg.render_resolution).image);
    rec.image_hash = file_hash(path);
  }
  write_manifest(m, dir / "manifest.jsonl");
  build_vocab(m).save(dir / "vocab.json");
  return m;
}

nlohmann::json to_json(const ChartRecord& r) {
  nlohmann::json ann = nlohmann::json::array();
  for (const auto& a : r.annotations)
    ann.push_back({{"element_id", a.element_id}, {"text", a.text}, {"box", a.bbox.as_array()}});
  nlohmann::json qas = nlohmann::json::array();
  for (const auto& qa : r.qa_pairs) qas.push_back(to_json(qa));
  return {{"chart_id", r.chart_id}, {"split", to_string(r.split)},    {"image_path", r.image_path},
          {"image_hash", r.image_hash}, {"spec", to_json(r.spec)}, {"annotations", std::move(ann)},
          {"qa_pairs", std::move(qas)}};
}

ChartRecord record_from_json(const nlohmann::json& j) {
  try {
    ChartRecord r;
    r.chart_id = j.at("chart_id").get<std::string>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.image_path = j.at("image_path").get<std::string>();
    r.image_hash = j.at("image_hash").get<std::string>();
    r.spec = spec_from_json(j.at("spec"));
    for (const auto& a : j.at("annotations"))
      r.annotations.push_back({a.at("element_id").get<std::string>(), a.at("text").get<std::string>(),
                               NormBBox::from_array(a.at("box").get<std::array<double, 4>>())});
    for (const auto& q : j.at("qa_pairs")) {
      r.qa_pairs.push_back(qa_from_json(q));
      r.qa_pairs.back().chart_id = r.chart_id;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, std::string("record: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptManifest, e.what());
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  nlohmann::json counts;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto recs = m.split(s);
    std::size_t qa = 0;
    for (const auto* r : recs) qa += r->qa_pairs.size();
    counts[std::string(to_string(s))] = {{"charts", recs.size()}, {"qa_pairs", qa}};
  }
  const nlohmann::json header = {{"format_version", m.format_version},
                                 {"chart_type", to_string(m.chart_type)},
                                 {"generation_seed", m.generation_seed},
                                 {"render_resolution", m.render_resolution},
                                 {"balance_regenerations", m.balance_regenerations},
                                 {"counts", counts},
                                 {"config", m.config}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

DatasetManifest read_manifest(const fs::path& root, ChartType type) {
  const fs::path path = type_dir(root, type) / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = root;
  std::string line;
  int line_no = 0;
  try {
    if (!std::getline(in, line)) throw Error(ErrorCode::CorruptManifest, "empty manifest " + path.string());
    ++line_no;
    const auto header = nlohmann::json::parse(line);
    m.format_version = header.at("format_version").get<int>();
    if (m.format_version != kFormatVersion)
      throw Error(ErrorCode::CorruptManifest, "unsupported manifest format_version " + std::to_string(m.format_version));
    m.chart_type = chart_type_from_string(header.at("chart_type").get<std::string>());
    m.generation_seed = header.at("generation_seed").get<std::uint64_t>();
    m.render_resolution = header.at("render_resolution").get<int>();
    m.balance_regenerations = header.at("balance_regenerations").get<int>();
    m.config = header.at("config");
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  if (m.chart_type != type) throw Error(ErrorCode::CorruptManifest, "manifest chart type does not match directory");
  return m;
}

std::string manifest_hash(const fs::path& root, ChartType type) {
  return file_hash(type_dir(root, type) / "manifest.jsonl");
}

int Vocab::question_id(const std::string& token) const {
  const auto it = question_index.find(token);
  return it == question_index.end() ? kUnk : it->second;
}

int Vocab::answer_id(const std::string& answer) const {
  const auto it = answer_index.find(answer);
  return it == answer_index.end() ? -1 : it->second;
}

std::string Vocab::hash() const { return hex64(fnv1a(to_json().dump())); }

nlohmann::json Vocab::to_json() const {
  return {{"question_tokens", question_tokens}, {"answer_tokens", answer_tokens}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  try {
    v.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
    v.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, std::string("vocab: ") + e.what());
  }
  if (v.question_tokens.size() < 2 || v.question_tokens[kPad] != "<pad>" || v.question_tokens[kUnk] != "<unk>")
    throw Error(ErrorCode::CorruptManifest, "vocab lacks reserved <pad>/<unk> ids");
  for (std::size_t i = 0; i < v.question_tokens.size(); ++i) v.question_index[v.question_tokens[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < v.answer_tokens.size(); ++i) v.answer_index[v.answer_tokens[i]] = static_cast<int>(i);
  return v;
}

void Vocab::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << to_json().dump(1) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

Vocab Vocab::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open vocab " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, path.string() + ": " + e.what());
  }
}

Vocab build_vocab(const DatasetManifest& m) {
  std::set<std::string> q, a;
  for (const auto* r : m.split(Split::Train))
    for (const auto& qa : r->qa_pairs) {
      q.insert(qa.question.tokens.begin(), qa.question.tokens.end());
      if (qa.answer.kind == AnswerKind::Generic) a.insert(qa.answer.generic_token);
    }
  std::vector<std::string> qt = {"<pad>", "<unk>"};
  qt.insert(qt.end(), q.begin(), q.end());
  return Vocab::from_json({{"question_tokens", qt}, {"answer_tokens", std::vector<std::string>(a.begin(), a.end())}});
}

std::vector<int> encode_question(const std::vector<std::string>& tokens, const Vocab& vocab, int max_length) {
  std::vector<int> ids(static_cast<std::size_t>(max_length), kPad);
  const std::size_t n = std::min(tokens.size(), ids.size());
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.question_id(tokens[i]);
  return ids;
}

std::vector<float> image_to_tensor(const RasterImage& image) {
  const std::size_t hw = static_cast<std::size_t>(image.width) * image.height;
  std::vector<float> out(hw * 3);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + p] = image.pixels[p * 3 + c] / 255.0f;
  return out;
}

namespace {

ModelExample make_example(const ChartRecord& rec, const Vocab& vocab, int qa_index, int max_len) {
  if (qa_index < 0 || qa_index >= static_cast<int>(rec.qa_pairs.size()))
    throw Error(ErrorCode::CorruptManifest, rec.chart_id + " has no QA pair " + std::to_string(qa_index));
  const auto& qa = rec.qa_pairs[static_cast<std::size_t>(qa_index)];
  ModelExample ex;
  ex.token_ids = encode_question(qa.question.tokens, vocab, max_len);
  ex.length = std::min(static_cast<int>(qa.question.tokens.size()), max_len);
  ex.kind = qa.question.kind;
  ex.template_id = qa.question.template_id;
  if (ex.kind == AnswerKind::Generic)
    ex.class_id = vocab.answer_id(qa.answer.generic_token);
  else
    ex.box = qa.answer.target_box;
  return ex;
}

RasterImage load_scaled(const DatasetManifest& m, const ChartRecord& rec, int resolution) {
  return downscale(read_png(m.root / rec.image_path), resolution);
}

}  // namespace

ModelExample load_example(const DatasetManifest& manifest, const Vocab& vocab, const std::string& chart_id,
                          int qa_index, int input_resolution, int max_question_length) {
  const auto& rec = manifest.find(chart_id);
  ModelExample ex = make_example(rec, vocab, qa_index, max_question_length);
  ex.image = image_to_tensor(load_scaled(manifest, rec, input_resolution));
  ex.resolution = input_resolution;
  return ex;
}

ExampleSource::ExampleSource(const DatasetManifest& manifest, const Vocab& vocab, int input_resolution,
                             int max_question_length)
    : manifest_(manifest), vocab_(vocab), resolution_(input_resolution), max_len_(max_question_length) {}

const RasterImage& ExampleSource::image(const ChartRecord& record) const {
  auto it = cache_.find(record.chart_id);
  if (it == cache_.end()) it = cache_.emplace(record.chart_id, load_scaled(manifest_, record, resolution_)).first;
  return it->second;
}

ModelExample ExampleSource::example(const ChartRecord& record, int qa_index, bool with_image) const {
  ModelExample ex = make_example(record, vocab_, qa_index, max_len_);
  if (with_image) ex.image = image_tensor(record);
  ex.resolution = resolution_;
  return ex;
}

}  // namespace chartnet
