#include "chartnet/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "chartnet/config.hpp"
#include "chartnet/error.hpp"
#include "chartnet/hash.hpp"
#include "chartnet/render.hpp"

namespace chartnet {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json checkpoint_metadata(ChartType type, const Vocab& vocab) {
  return {{"chart_type", to_string(type)}, {"vocab", vocab.to_json()}};
}

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string image, question, checkpoint, out, trace;
  bool trace_requested = false;
};

ExperimentConfig config_of(const Options& o) {
  return load_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), o.overrides);
}

std::string key_listing() {
  std::ostringstream s;
  s << "Config keys (--set key=value, defaults shown):\n";
  for (const auto& k : config_keys()) s << "  " << k.key << " = " << k.default_value << "\n";
  return s.str();
}

struct Dataset {
  DatasetManifest manifest;
  Vocab vocab;
};

Dataset open_dataset(const DatasetConfig& c) {
  Dataset d{read_manifest(c.root, c.chart_type), {}};
  d.vocab = Vocab::load(type_dir(c.root, c.chart_type) / "vocab.json");
  return d;
}

std::unique_ptr<Model<float>> load_model(const CliHooks& hooks, const fs::path& path, CheckpointInfo* info) {
  if (hooks.load_model) return hooks.load_model(path, info);
  return load_checkpoint(path, "", info);
}

int cmd_gen(const Options& o, std::ostream& out) {
  ExperimentConfig c = config_of(o);
  if (!o.out.empty()) c.dataset.root = o.out;
  const DatasetManifest m = build_dataset(c.dataset);
  Fnv1a images;
  json charts, pairs;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    std::size_t n = 0;
    for (const auto* r : m.split(s)) n += r->qa_pairs.size();
    charts[std::string(to_string(s))] = m.split(s).size();
    pairs[std::string(to_string(s))] = n;
  }
  for (const auto& r : m.records) images.update(r.image_hash);
  out << json{{"chart_type", to_string(m.chart_type)},
              {"root", c.dataset.root.string()},
              {"manifest_hash", manifest_hash(c.dataset.root, m.chart_type)},
              {"images_hash", hex64(images.digest())},
              {"charts", charts},
              {"qa_pairs", pairs}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig c = config_of(o);
  if (!o.out.empty()) c.run_dir = o.out;
  const Dataset d = open_dataset(c.dataset);
  ModelConfig mc = c.model;
  mc.question_vocab = static_cast<int>(d.vocab.question_tokens.size());
  mc.answer_vocab = static_cast<int>(d.vocab.answer_tokens.size());
  auto model = make_model<float>(mc);
  ExampleSource source(d.manifest, d.vocab, mc.input_resolution);

  TrainOptions opt;
  opt.hyper = c.train;
  opt.on_epoch = [&err](const EpochRecord& r) {
    err << "epoch " << r.epoch << " train_loss " << r.train_loss << " train_acc " << r.train_accuracy << " val_loss "
        << r.val_loss << " val_acc " << r.val_accuracy << " val_iou " << r.val_mean_iou << " (" << r.seconds
        << " s)\n";
  };
  const TrainResult result = train(*model, source, opt);

  fs::create_directories(c.run_dir);
  write_history_csv(result.history, c.run_dir / "history.csv");
  json meta = checkpoint_metadata(d.manifest.chart_type, d.vocab);
  meta["best_epoch"] = result.best_epoch;
  meta["hyperparameters"] = c.train.to_json();
  save_checkpoint(c.run_dir / "model.ckpt", *model, d.vocab.hash(), meta);
  std::ofstream(c.run_dir / "config.json") << c.to_json().dump(2) << "\n";
  json summary = {{"checkpoint", (c.run_dir / "model.ckpt").string()},
                  {"best_epoch", result.best_epoch},
                  {"epochs_run", result.history.size()}};
  if (c.train.validate) {
    summary["val"] = result.best_val.to_json();
    std::ofstream(c.run_dir / "val_metrics.json") << result.best_val.to_json().dump(2) << "\n";
  }
  out << summary.dump() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, const CliHooks& hooks) {
  const ExperimentConfig c = config_of(o);
  const Dataset d = open_dataset(c.dataset);
  CheckpointInfo info;
  auto model = load_model(hooks, o.checkpoint, &info);
  if (info.vocab_hash != d.vocab.hash())
    throw Error(ErrorCode::VocabMismatch, "checkpoint vocabulary " + info.vocab_hash + " does not match dataset " +
                                              d.vocab.hash());
  ExampleSource source(d.manifest, d.vocab, model->config().input_resolution);
  ModelPredictor predictor(*model, source);
  const Metrics m = evaluate(predictor, d.manifest, d.vocab, c.eval_split, c.train.iou_threshold);
  json report = m.to_json();
  report["split"] = to_string(c.eval_split);
  report["model"] = to_string(model->config().kind);
  if (!o.out.empty()) std::ofstream(o.out) << report.dump(2) << "\n";
  out << report.dump() << "\n";
  return kExitOk;
}

std::string run_ocr(const std::string& command, const fs::path& crop) {
  const std::string line = command + " '" + crop.string() + "'";
  FILE* pipe = popen(line.c_str(), "r");
  if (!pipe) throw Error(ErrorCode::IoFailure, "cannot run OCR command " + command);
  std::string text;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) text += buf;
  if (pclose(pipe) != 0) throw Error(ErrorCode::IoFailure, "OCR command failed: " + command);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.pop_back();
  return text;
}

int cmd_ask(const Options& o, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  CheckpointInfo info;
  auto model = load_model(hooks, o.checkpoint, &info);
  if (!info.metadata.contains("vocab") || !info.metadata.contains("chart_type"))
    throw Error(ErrorCode::VocabMismatch, "checkpoint carries no vocabulary");
  const Vocab vocab = Vocab::from_json(info.metadata.at("vocab"));
  const ChartType type = chart_type_from_string(info.metadata.at("chart_type").get<std::string>());
  const ModelConfig& mc = model->config();
  if (mc.backbone != BackboneKind::Desk)
    throw Error(ErrorCode::PreconditionViolation, "ask takes raw images only with the desk backbone");

  const std::vector<std::string> tokens = tokenize(o.question);
  if (tokens.empty()) throw Error(ErrorCode::EmptyQuestion, "empty question");
  AnswerKind kind = AnswerKind::Generic;
  if (const auto q = parse_question(o.question, type))
    kind = q->kind;
  else
    err << "question matches no " << to_string(type) << " template; answering as a generic question\n";
  if (kind == AnswerKind::ChartSpecific && !model->has_box_head())
    throw Error(ErrorCode::KindMismatch, "this model answers generic questions only");

  const RasterImage full = read_png(o.image);
  const int r = mc.input_resolution;
  const RasterImage small = full.width == r && full.height == r ? full : downscale(full, r);
  nn::Graph<float> g;
  nn::NoGradScope<float> no_grad(g);
  ImageEncoding<float> enc;
  if (model->uses_image()) enc = model->encode_image(g, nn::Tensor<float>({3, r, r}, image_to_tensor(small)));
  Trace trace;
  const auto ids = encode_question(tokens, vocab);
  const auto& v = model->forward(g, enc, ids, kind, &trace).value().storage();

  if (kind == AnswerKind::Generic) {
    const auto arg = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    out << vocab.answer_tokens.at(arg) << "\n";
  } else {
    bool repaired = false;
    const NormBBox box = decode_box({v[0], v[1], v[2], v[3]}, &repaired);
    out << "box " << box.x_min << " " << box.y_min << " " << box.x_max << " " << box.y_max << "\n";
    if (box.area() > 0.0) {
      const fs::path crop_path = o.out.empty() ? fs::path("answer_crop.png") : fs::path(o.out);
      write_png(crop_path, crop(full, box));
      out << "crop " << crop_path.string() << "\n";
      const char* ocr = std::getenv("CHARTNET_OCR_CMD");
      if (ocr && *ocr) out << "text " << run_ocr(ocr, crop_path) << "\n";
    } else {
      err << "predicted box has no area; no crop written\n";
    }
  }

  if (o.trace_requested) {
    json t = {{"tokens", tokens},
              {"kind", to_string(kind)},
              {"word_attention", trace.word_attention},
              {"spatial_attention", trace.spatial_attention}};
    if (model->uses_image()) t["kb_side"] = enc.side;
    if (o.trace.empty())
      out << t.dump() << "\n";
    else
      std::ofstream(o.trace) << t.dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  CLI::App app{"Synthetic chart question answering: dataset generation, training, evaluation and querying.",
               "chartnet"};
  app.require_subcommand(1);
  app.footer(key_listing());
  Options o;

  auto add_config = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "Override a config key (key=value); repeatable");
  };
  CLI::App* gen = app.add_subcommand("gen", "Generate a dataset and print its hashes");
  add_config(gen);
  gen->add_option("--out", o.out, "Dataset root (overrides dataset.root)");

  CLI::App* tr = app.add_subcommand("train", "Train a model; writes checkpoint, history and config to the run dir");
  add_config(tr);
  tr->add_option("--out", o.out, "Run directory (overrides run_dir)");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split and print metrics JSON");
  add_config(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--out", o.out, "Also write the metrics JSON here");

  CLI::App* ask = app.add_subcommand("ask", "Answer one question about one chart image");
  ask->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ask->add_option("--image", o.image, "Chart PNG")->required()->check(CLI::ExistingFile);
  ask->add_option("--question", o.question, "Question text")->required();
  ask->add_option("--out", o.out, "Crop file for chart-specific answers (default answer_crop.png)");
  ask->add_option("--trace", o.trace, "Dump per-step attention as JSON (to stdout, or to the given file)")
      ->expected(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  o.trace_requested = ask->count("--trace") > 0;

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (tr->parsed()) return cmd_train(o, out, err);
    if (ev->parsed()) return cmd_eval(o, out, hooks);
    return cmd_ask(o, out, err, hooks);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace chartnet
