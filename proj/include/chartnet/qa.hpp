#pragma once

// Question templates and the symbolic oracle that answers them from a spec.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chartnet/bbox.hpp"
#include "chartnet/chart_model.hpp"
#include "json.hpp"

namespace chartnet {

enum class AnswerKind { Generic, ChartSpecific };
std::string_view to_string(AnswerKind k);

struct TemplateInfo {
  std::string id;  // e.g. "bar.highest_color"
  ChartType chart;
  AnswerKind kind;
  // Surface form with {X} and {Y} slots for palette color names.
  std::string surface;
  int slots;
};

// The ten templates for a chart type, in instantiation order.
const std::vector<TemplateInfo>& templates(ChartType type);
const TemplateInfo& template_info(std::string_view id);

struct Question {
  std::string template_id;
  std::string text;
  std::vector<std::string> tokens;
  AnswerKind kind = AnswerKind::Generic;
  std::vector<int> colors;  // palette indices filling {X}, {Y}
  bool operator==(const Question&) const = default;
};

struct Answer {
  AnswerKind kind = AnswerKind::Generic;
  std::string generic_token;  // Generic only
  std::string target_text;    // ChartSpecific only
  NormBBox target_box;        // ChartSpecific only
  int element = -1;           // index of the answering bar/sector, -1 for yes/no
  bool operator==(const Answer&) const = default;
};

struct QAPair {
  Question question;
  Answer answer;
  std::string chart_id;
  bool operator==(const QAPair&) const = default;
};

// Lowercase; splits on whitespace and keeps each punctuation character as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Builds a question from a template and its slot colors.
Question make_question(std::string_view template_id, std::vector<int> colors = {});

// Maps free text back to a template when it matches one of the surface forms.
std::optional<Question> parse_question(std::string_view text, ChartType type);

// Closed answer vocabulary: "yes", "no" and every palette color name.
std::vector<std::string> generic_answer_vocabulary();

// Throws TemplateInapplicable when the question does not fit the spec and
// UnansweredComposite when a composite filter selects nothing. Chart-specific
// answers carry the label box from the layout at the given resolution.
Answer oracle_answer(const ChartSpec& spec, const Question& question, int resolution = 448);

// Ten pairs, one per template. Throws TemplateInapplicable when some template
// cannot be instantiated on this spec.
std::vector<QAPair> instantiate_questions(const ChartSpec& spec, std::uint64_t rng_seed,
                                          const std::string& chart_id = {}, int resolution = 448);

nlohmann::json to_json(const QAPair& qa);
QAPair qa_from_json(const nlohmann::json& j);

}  // namespace chartnet
