#include "chartnet/qa.hpp"

#include <algorithm>
#include <cctype>

#include "chartnet/error.hpp"
#include "chartnet/render.hpp"
#include "chartnet/rng.hpp"

namespace chartnet {

std::string_view to_string(AnswerKind k) { return k == AnswerKind::Generic ? "generic" : "chart_specific"; }

const std::vector<TemplateInfo>& templates(ChartType type) {
  using enum AnswerKind;
  static const std::vector<TemplateInfo> bar = {
      {"bar.highest_color", ChartType::Bar, Generic, "What is the color of the highest bar?", 0},
      {"bar.lowest_color", ChartType::Bar, Generic, "What is the color of the lowest bar?", 0},
      {"bar.left_of_highest", ChartType::Bar, Generic, "What is the color of the bar left to the highest bar?", 0},
      {"bar.right_of", ChartType::Bar, Generic, "What is the color of the bar right to the {X} bar?", 1},
      {"bar.exists_yes", ChartType::Bar, Generic, "Does there exist a {X} color bar?", 1},
      {"bar.exists_no", ChartType::Bar, Generic, "Does there exist a {X} color bar?", 1},
      {"bar.rightmost_right_taller", ChartType::Bar, Generic,
       "What is the color of the rightmost bar right to the {X} bar and taller than the {Y} bar?", 2},
      {"bar.leftmost_left_shorter", ChartType::Bar, Generic,
       "What is the color of the leftmost bar left to the {X} bar and shorter than the {Y} bar?", 2},
      {"bar.label_highest", ChartType::Bar, ChartSpecific, "What is the label of the highest bar?", 0},
      {"bar.label_of_color", ChartType::Bar, ChartSpecific, "What is the label of the {X} bar?", 1},
  };
  static const std::vector<TemplateInfo> pie = {
      {"pie.largest_color", ChartType::Pie, Generic, "What is the color of the largest sector?", 0},
      {"pie.smallest_color", ChartType::Pie, Generic, "What is the color of the smallest sector?", 0},
      {"pie.anticlockwise_of_largest", ChartType::Pie, Generic,
       "What is the color of the next sector anticlockwise from the largest sector?", 0},
      {"pie.clockwise_of", ChartType::Pie, Generic, "What is the color of the next sector clockwise from the {X} sector?",
       1},
      {"pie.exists_yes", ChartType::Pie, Generic, "Does there exist a {X} color sector?", 1},
      {"pie.exists_no", ChartType::Pie, Generic, "Does there exist a {X} color sector?", 1},
      {"pie.first_clockwise_larger", ChartType::Pie, Generic,
       "What is the color of the first sector clockwise from the {X} sector that is larger than the {Y} sector?", 2},
      {"pie.first_anticlockwise_smaller", ChartType::Pie, Generic,
       "What is the color of the first sector anticlockwise from the {X} sector that is smaller than the {Y} sector?",
       2},
      {"pie.label_largest", ChartType::Pie, ChartSpecific, "What is the label of the largest sector?", 0},
      {"pie.label_smallest", ChartType::Pie, ChartSpecific, "What is the label of the smallest sector?", 0},
  };
  return type == ChartType::Bar ? bar : pie;
}

const TemplateInfo& template_info(std::string_view id) {
  for (auto type : {ChartType::Bar, ChartType::Pie})
    for (const auto& t : templates(type))
      if (t.id == id) return t;
  throw Error(ErrorCode::TemplateInapplicable, "unknown template '" + std::string(id) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Question make_question(std::string_view template_id, std::vector<int> colors) {
  const auto& t = template_info(template_id);
  if (static_cast<int>(colors.size()) != t.slots)
    throw Error(ErrorCode::TemplateInapplicable, t.id + " takes " + std::to_string(t.slots) + " colors");
  std::string text = t.surface;
  const char* slot_names[] = {"{X}", "{Y}"};
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i] < 0 || colors[i] >= static_cast<int>(palette().size()))
      throw Error(ErrorCode::TemplateInapplicable, "color index out of range");
    text.replace(text.find(slot_names[i]), 3, palette()[static_cast<std::size_t>(colors[i])].name);
  }
  Question q;
  q.template_id = t.id;
  q.tokens = tokenize(text);
  q.text = std::move(text);
  q.kind = t.kind;
  q.colors = std::move(colors);
  return q;
}

std::optional<Question> parse_question(std::string_view text, ChartType type) {
  const auto tokens = tokenize(text);
  for (const auto& t : templates(type)) {
    std::string surface = t.surface;
    for (auto [slot, marker] : {std::pair{"{X}", "slotx"}, std::pair{"{Y}", "sloty"}})
      if (auto pos = surface.find(slot); pos != std::string::npos) surface.replace(pos, 3, marker);
    const auto pattern = tokenize(surface);
    if (pattern.size() != tokens.size()) continue;
    std::vector<int> colors(static_cast<std::size_t>(t.slots), -1);
    bool ok = true;
    for (std::size_t i = 0; ok && i < pattern.size(); ++i) {
      if (pattern[i] == "slotx" || pattern[i] == "sloty") {
        const int c = color_index(tokens[i]);
        ok = c >= 0;
        colors[pattern[i] == "slotx" ? 0 : 1] = c;
      } else {
        ok = pattern[i] == tokens[i];
      }
    }
    // The two existence templates share a surface; the first one is returned.
    if (ok) return make_question(t.id, std::move(colors));
  }
  return std::nullopt;
}

std::vector<std::string> generic_answer_vocabulary() {
  std::vector<std::string> v = {"yes", "no"};
  for (const auto& c : palette()) v.emplace_back(c.name);
  return v;
}

namespace {

struct View {
  const ChartSpec& spec;
  int n;
  double size(int i) const { return element_size(spec, i); }
  int color(int i) const { return element_color(spec, i); }
  int index_of(int color, const std::string& tid) const {
    for (int i = 0; i < n; ++i)
      if (element_color(spec, i) == color) return i;
    throw Error(ErrorCode::TemplateInapplicable,
                tid + ": color " + std::string(palette().at(static_cast<std::size_t>(color)).name) + " not in chart");
  }
  int argmax() const {
    int b = 0;
    for (int i = 1; i < n; ++i)
      if (size(i) > size(b)) b = i;
    return b;
  }
  int argmin() const {
    int b = 0;
    for (int i = 1; i < n; ++i)
      if (size(i) < size(b)) b = i;
    return b;
  }
};

// Element answering the question, or -1 for existence questions.
int answer_element(const View& v, const Question& q) {
  const std::string& id = q.template_id;
  const auto x = [&] { return v.index_of(q.colors.at(0), id); };
  const auto xy = [&] {
    const int ix = x(), iy = v.index_of(q.colors.at(1), id);
    if (ix == iy) throw Error(ErrorCode::TemplateInapplicable, id + ": both slots name the same element");
    return std::pair{ix, iy};
  };
  const auto none = [&]() -> int { throw Error(ErrorCode::UnansweredComposite, id + ": filter selects no element"); };

  if (id == "bar.highest_color" || id == "bar.label_highest" || id == "pie.largest_color" || id == "pie.label_largest")
    return v.argmax();
  if (id == "bar.lowest_color" || id == "pie.smallest_color" || id == "pie.label_smallest") return v.argmin();
  if (id == "bar.left_of_highest") {
    const int i = v.argmax();
    if (i == 0) throw Error(ErrorCode::TemplateInapplicable, id + ": highest bar is leftmost");
    return i - 1;
  }
  if (id == "bar.right_of") {
    const int i = x();
    if (i == v.n - 1) throw Error(ErrorCode::TemplateInapplicable, id + ": bar is rightmost");
    return i + 1;
  }
  if (id == "bar.label_of_color") return x();
  if (id == "bar.exists_yes" || id == "bar.exists_no" || id == "pie.exists_yes" || id == "pie.exists_no") return -1;
  if (id == "bar.rightmost_right_taller") {
    const auto [ix, iy] = xy();
    for (int j = v.n - 1; j > ix; --j)
      if (v.size(j) > v.size(iy)) return j;
    return none();
  }
  if (id == "bar.leftmost_left_shorter") {
    const auto [ix, iy] = xy();
    for (int j = 0; j < ix; ++j)
      if (v.size(j) < v.size(iy)) return j;
    return none();
  }
  if (id == "pie.anticlockwise_of_largest") return (v.argmax() + v.n - 1) % v.n;
  if (id == "pie.clockwise_of") return (x() + 1) % v.n;
  if (id == "pie.first_clockwise_larger") {
    const auto [ix, iy] = xy();
    for (int step = 1; step < v.n; ++step)
      if (const int j = (ix + step) % v.n; v.size(j) > v.size(iy)) return j;
    return none();
  }
  if (id == "pie.first_anticlockwise_smaller") {
    const auto [ix, iy] = xy();
    for (int step = 1; step < v.n; ++step)
      if (const int j = (ix - step + v.n) % v.n; v.size(j) < v.size(iy)) return j;
    return none();
  }
  throw Error(ErrorCode::TemplateInapplicable, "no rule for template " + id);
}

bool is_composite(const std::string& id) { return template_info(id).slots == 2; }

}  // namespace

Answer oracle_answer(const ChartSpec& spec, const Question& q, int resolution) {
  const auto& t = template_info(q.template_id);
  if (t.chart != chart_type(spec))
    throw Error(ErrorCode::TemplateInapplicable, t.id + " does not apply to a " + std::string(to_string(chart_type(spec))) + " chart");
  if (static_cast<int>(q.colors.size()) != t.slots)
    throw Error(ErrorCode::TemplateInapplicable, t.id + ": wrong number of slot colors");
  const View v{spec, element_count(spec)};
  Answer a;
  a.kind = t.kind;
  a.element = answer_element(v, q);
  if (a.element < 0) {
    bool present = false;
    for (int i = 0; i < v.n; ++i) present = present || v.color(i) == q.colors.at(0);
    a.generic_token = present ? "yes" : "no";
  } else if (t.kind == AnswerKind::Generic) {
    a.generic_token = std::string(palette()[static_cast<std::size_t>(v.color(a.element))].name);
  } else {
    const auto ann = annotate(spec, resolution);
    const auto& box = element_annotation(ann, chart_type(spec), a.element);
    a.target_text = box.text;
    a.target_box = box.bbox;
  }
  return a;
}

std::vector<QAPair> instantiate_questions(const ChartSpec& spec, std::uint64_t rng_seed, const std::string& chart_id,
                                          int resolution) {
  const ChartType type = chart_type(spec);
  const View v{spec, element_count(spec)};
  Rng rng(rng_seed);
  std::vector<QAPair> out;
  for (const auto& t : templates(type)) {
    std::vector<int> colors;
    if (t.id.ends_with("exists_no")) {
      std::vector<int> absent;
      for (int c = 0; c < static_cast<int>(palette().size()); ++c) {
        bool present = false;
        for (int i = 0; i < v.n; ++i) present = present || v.color(i) == c;
        if (!present) absent.push_back(c);
      }
      if (absent.empty()) throw Error(ErrorCode::TemplateInapplicable, t.id + ": every palette color is used");
      colors.push_back(absent[rng.below(absent.size())]);
    } else if (is_composite(t.id)) {
      // Uniform over ordered pairs whose filter selects at least one element.
      std::vector<std::vector<int>> answerable;
      for (int ix = 0; ix < v.n; ++ix)
        for (int iy = 0; iy < v.n; ++iy) {
          if (ix == iy) continue;
          std::vector<int> cand = {v.color(ix), v.color(iy)};
          try {
            (void)answer_element(v, make_question(t.id, cand));
            answerable.push_back(std::move(cand));
          } catch (const Error& e) {
            if (e.code() != ErrorCode::UnansweredComposite) throw;
          }
        }
      if (answerable.empty()) throw Error(ErrorCode::TemplateInapplicable, t.id + ": no answerable color pair");
      colors = answerable[rng.below(answerable.size())];
    } else if (t.slots == 1) {
      // bar.right_of needs a bar with a right neighbour.
      const int limit = t.id == "bar.right_of" ? v.n - 1 : v.n;
      colors.push_back(v.color(static_cast<int>(rng.below(static_cast<std::uint64_t>(limit)))));
    }
    QAPair qa;
    qa.question = make_question(t.id, std::move(colors));
    qa.answer = oracle_answer(spec, qa.question, resolution);
    qa.chart_id = chart_id;
    out.push_back(std::move(qa));
  }
  return out;
}

nlohmann::json to_json(const QAPair& qa) {
  nlohmann::json colors = nlohmann::json::array();
  for (int c : qa.question.colors) colors.push_back(palette().at(static_cast<std::size_t>(c)).name);
  nlohmann::json j = {{"template_id", qa.question.template_id},
                      {"question", qa.question.text},
                      {"tokens", qa.question.tokens},
                      {"kind", to_string(qa.question.kind)},
                      {"colors", colors},
                      {"element", qa.answer.element}};
  if (qa.answer.kind == AnswerKind::Generic) {
    j["answer"] = qa.answer.generic_token;
  } else {
    j["answer_text"] = qa.answer.target_text;
    const auto& b = qa.answer.target_box;
    j["answer_box"] = {b.x_min, b.y_min, b.x_max, b.y_max};
  }
  return j;
}

QAPair qa_from_json(const nlohmann::json& j) {
  try {
    QAPair qa;
    auto& q = qa.question;
    q.template_id = j.at("template_id").get<std::string>();
    q.text = j.at("question").get<std::string>();
    q.tokens = j.at("tokens").get<std::vector<std::string>>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "generic" && kind != "chart_specific") throw Error(ErrorCode::CorruptManifest, "bad kind " + kind);
    q.kind = kind == "generic" ? AnswerKind::Generic : AnswerKind::ChartSpecific;
    for (const auto& c : j.at("colors")) {
      const int idx = color_index(c.get<std::string>());
      if (idx < 0) throw Error(ErrorCode::CorruptManifest, "unknown color " + c.dump());
      q.colors.push_back(idx);
    }
    qa.answer.kind = q.kind;
    qa.answer.element = j.at("element").get<int>();
    if (q.kind == AnswerKind::Generic) {
      qa.answer.generic_token = j.at("answer").get<std::string>();
    } else {
      qa.answer.target_text = j.at("answer_text").get<std::string>();
      const auto b = j.at("answer_box").get<std::array<double, 4>>();
      qa.answer.target_box = NormBBox::from_array(b);
    }
    return qa;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, std::string("qa pair: ") + e.what());
  }
}

}  // namespace chartnet
