#pragma once

// Dataset generation, the on-disk manifest, vocabularies and model-ready examples.

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "chartnet/chart_model.hpp"
#include "chartnet/qa.hpp"
#include "chartnet/render.hpp"
#include "json.hpp"

namespace chartnet {

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

constexpr int kFormatVersion = 1;

struct DatasetConfig {
  ChartType chart_type = ChartType::Bar;
  int train_charts = 2000;
  int val_charts = 500;
  int test_charts = 500;
  std::uint64_t seed = 1;
  int render_resolution = 448;
  GenerationConstraints constraints;
  // Every generic class seen in train must occur at least this often; only
  // enforced when train_charts >= balance_check_min_charts.
  int min_class_count = 10;
  int balance_check_min_charts = 1000;
  std::filesystem::path root = "data";

  nlohmann::json to_json() const;
};

struct ChartRecord {
  std::string chart_id;
  Split split = Split::Train;
  std::string image_path;  // relative to the dataset root
  std::string image_hash;  // FNV-1a of the PNG file bytes, hex
  ChartSpec spec;
  std::vector<TextAnnotation> annotations;
  std::vector<QAPair> qa_pairs;
  bool operator==(const ChartRecord&) const = default;
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  ChartType chart_type = ChartType::Bar;
  std::uint64_t generation_seed = 0;
  int render_resolution = 448;
  int balance_regenerations = 0;
  nlohmann::json config;
  std::vector<ChartRecord> records;
  std::filesystem::path root;  // not serialized

  std::vector<const ChartRecord*> split(Split s) const;
  const ChartRecord& find(const std::string& chart_id) const;
};

// Directory holding one chart type: <root>/<type>.
std::filesystem::path type_dir(const std::filesystem::path& root, ChartType type);

// Writes images, manifest.jsonl and vocab.json under <root>/<type>.
// Rejection-resamples any spec on which some template cannot be instantiated.
DatasetManifest build_dataset(const DatasetConfig& config);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Throws IoFailure when missing and CorruptManifest on malformed content.
DatasetManifest read_manifest(const std::filesystem::path& root, ChartType type);
nlohmann::json to_json(const ChartRecord& r);
ChartRecord record_from_json(const nlohmann::json& j);

// FNV-1a of the manifest file bytes, hex.
std::string manifest_hash(const std::filesystem::path& root, ChartType type);

constexpr int kPad = 0;
constexpr int kUnk = 1;

struct Vocab {
  std::vector<std::string> question_tokens;  // id -> token; 0 = <pad>, 1 = <unk>
  std::vector<std::string> answer_tokens;    // id -> generic answer
  std::unordered_map<std::string, int> question_index;
  std::unordered_map<std::string, int> answer_index;

  int question_id(const std::string& token) const;
  // -1 when the answer was never seen in train.
  int answer_id(const std::string& answer) const;
  std::string hash() const;
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
};

// Built from the train split only, in sorted order.
Vocab build_vocab(const DatasetManifest& manifest);

struct ModelExample {
  std::vector<float> image;  // 3 x r x r, channel-major, values in [0, 1]
  int resolution = 0;
  std::vector<int> token_ids;  // padded / truncated to max_question_length
  int length = 0;              // non-pad tokens
  AnswerKind kind = AnswerKind::Generic;
  int class_id = -1;
  NormBBox box;
  std::string template_id;
};

constexpr int kMaxQuestionLength = 24;

std::vector<int> encode_question(const std::vector<std::string>& tokens, const Vocab& vocab,
                                 int max_length = kMaxQuestionLength);

// Decoded image scaled to [0, 1], channel-major.
std::vector<float> image_to_tensor(const RasterImage& image);

ModelExample load_example(const DatasetManifest& manifest, const Vocab& vocab, const std::string& chart_id,
                          int qa_index, int input_resolution = 224, int max_question_length = kMaxQuestionLength);

// Loader that decodes each chart image once and keeps the downscaled bytes.
class ExampleSource {
 public:
  ExampleSource(const DatasetManifest& manifest, const Vocab& vocab, int input_resolution = 224,
                int max_question_length = kMaxQuestionLength);

  const DatasetManifest& manifest() const { return manifest_; }
  const Vocab& vocab() const { return vocab_; }
  int input_resolution() const { return resolution_; }

  const RasterImage& image(const ChartRecord& record) const;
  std::vector<float> image_tensor(const ChartRecord& record) const { return image_to_tensor(image(record)); }
  // with_image=false leaves ModelExample::image empty.
  ModelExample example(const ChartRecord& record, int qa_index, bool with_image = true) const;

 private:
  const DatasetManifest& manifest_;
  const Vocab& vocab_;
  int resolution_;
  int max_len_;
  mutable std::unordered_map<std::string, RasterImage> cache_;
};

}  // namespace chartnet
