#include "chartnet/chart_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "chartnet/error.hpp"
#include "chartnet/hash.hpp"
#include "chartnet/rng.hpp"

namespace chartnet {

const std::vector<ColorName>& palette() {
  static const std::vector<ColorName> colors = {
      {"red", {255, 0, 0}},        {"blue", {0, 0, 255}},         {"green", {0, 128, 0}},
      {"black", {0, 0, 0}},        {"yellow", {255, 255, 0}},     {"yellowgreen", {154, 205, 50}},
      {"orange", {255, 165, 0}},   {"purple", {128, 0, 128}},     {"cyan", {0, 255, 255}},
      {"magenta", {255, 0, 255}},  {"brown", {139, 69, 19}},      {"gray", {128, 128, 128}},
  };
  return colors;
}

int color_index(std::string_view name) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].name == name) return static_cast<int>(i);
  return -1;
}

const std::vector<std::string>& label_lexicon() {
  static const std::vector<std::string> labels = {
      "C++", "C#",  "F#",  "Go",   "Rust", "Java", "Lua", "Perl", "PHP",  "Ruby",
      "R",   "D",   "Dart", "Nim", "Zig",  "Lisp", "ML",  "Ada",  "Elm",  "Bash",
      "SQL", "Vala", "Io",  "Hack", "Tcl", "APL",  "Awk", "Pony", "Odin", "Coq",
  };
  return labels;
}

std::string_view to_string(ChartType t) { return t == ChartType::Bar ? "bar" : "pie"; }

ChartType chart_type_from_string(std::string_view s) {
  if (s == "bar") return ChartType::Bar;
  if (s == "pie") return ChartType::Pie;
  throw Error(ErrorCode::InvalidConfig, "unknown chart type '" + std::string(s) + "'");
}

ChartType chart_type(const ChartSpec& spec) {
  return std::holds_alternative<BarChartSpec>(spec) ? ChartType::Bar : ChartType::Pie;
}

int element_count(const ChartSpec& spec) {
  return std::visit(
      [](const auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, BarChartSpec>)
          return static_cast<int>(s.bars.size());
        else
          return static_cast<int>(s.sectors.size());
      },
      spec);
}

int element_color(const ChartSpec& spec, int i) {
  if (const auto* b = std::get_if<BarChartSpec>(&spec)) return b->bars.at(static_cast<std::size_t>(i)).color;
  return std::get<PieChartSpec>(spec).sectors.at(static_cast<std::size_t>(i)).color;
}

double element_size(const ChartSpec& spec, int i) {
  if (const auto* b = std::get_if<BarChartSpec>(&spec)) return b->bars.at(static_cast<std::size_t>(i)).height;
  return std::get<PieChartSpec>(spec).sectors.at(static_cast<std::size_t>(i)).angle;
}

const std::string& element_label(const ChartSpec& spec, int i) {
  if (const auto* b = std::get_if<BarChartSpec>(&spec)) return b->bars.at(static_cast<std::size_t>(i)).label;
  return std::get<PieChartSpec>(spec).sectors.at(static_cast<std::size_t>(i)).label;
}

namespace {

void check_common(const GenerationConstraints& c) {
  const int n_colors = static_cast<int>(palette().size());
  const int n_labels = static_cast<int>(label_lexicon().size());
  if (c.min_elements < 1 || c.min_elements > c.max_elements)
    throw Error(ErrorCode::InfeasibleConstraints, "min_elements must be in [1, max_elements]");
  if (c.min_elements > n_colors || c.min_elements > n_labels)
    throw Error(ErrorCode::InfeasibleConstraints,
                "min_elements " + std::to_string(c.min_elements) + " exceeds palette size " + std::to_string(n_colors));
}

// Distinct palette colors and distinct lexicon labels, in random order.
template <class Elem>
std::vector<Elem> pick_identities(int n, Rng& rng) {
  std::vector<int> colors(palette().size());
  std::iota(colors.begin(), colors.end(), 0);
  rng.shuffle(colors);
  std::vector<int> labels(label_lexicon().size());
  std::iota(labels.begin(), labels.end(), 0);
  rng.shuffle(labels);
  std::vector<Elem> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].color = colors[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)].label = label_lexicon()[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  return out;
}

bool bar_count_feasible(int n, const GenerationConstraints& c) {
  return n <= static_cast<int>(palette().size()) && n <= static_cast<int>(label_lexicon().size()) &&
         (n - 1) * c.height_epsilon <= 1.0 - c.min_height + 1e-12;
}

bool pie_count_feasible(int n, const GenerationConstraints& c) {
  return n <= static_cast<int>(palette().size()) && n <= static_cast<int>(label_lexicon().size()) &&
         n * c.min_sector_angle + c.angle_epsilon * n * (n - 1) / 2.0 < 360.0;
}

int pick_count(Rng& rng, const GenerationConstraints& c, bool (*feasible)(int, const GenerationConstraints&)) {
  std::vector<int> counts;
  for (int n = c.min_elements; n <= c.max_elements; ++n)
    if (feasible(n, c)) counts.push_back(n);
  if (counts.empty())
    throw Error(ErrorCode::InfeasibleConstraints, "no element count in [" + std::to_string(c.min_elements) + ", " +
                                                      std::to_string(c.max_elements) + "] admits a valid chart");
  return counts[static_cast<std::size_t>(rng.below(counts.size()))];
}

}  // namespace

BarChartSpec sample_bar_spec(std::uint64_t rng_seed, const GenerationConstraints& c) {
  check_common(c);
  Rng rng(rng_seed);
  const int n = pick_count(rng, c, &bar_count_feasible);
  BarChartSpec spec;
  spec.seed = rng_seed;
  spec.bars = pick_identities<Bar>(n, rng);
  // Rejection sampling: heights i.i.d. uniform until no pair is closer than epsilon.
  for (int attempt = 0;; ++attempt) {
    if (attempt >= c.max_rejections)
      throw Error(ErrorCode::InfeasibleConstraints, "height rejection sampling did not converge");
    std::vector<double> h(static_cast<std::size_t>(n));
    for (auto& v : h) v = rng.uniform(c.min_height, 1.0);
    std::vector<double> sorted = h;
    std::sort(sorted.begin(), sorted.end());
    bool ok = true;
    for (std::size_t i = 1; i < sorted.size(); ++i) ok = ok && sorted[i] - sorted[i - 1] >= c.height_epsilon;
    if (!ok) continue;
    for (int i = 0; i < n; ++i) spec.bars[static_cast<std::size_t>(i)].height = h[static_cast<std::size_t>(i)];
    return spec;
  }
}

PieChartSpec sample_pie_spec(std::uint64_t rng_seed, const GenerationConstraints& c) {
  check_common(c);
  Rng rng(rng_seed);
  const int n = pick_count(rng, c, &pie_count_feasible);
  PieChartSpec spec;
  spec.seed = rng_seed;
  spec.sectors = pick_identities<Sector>(n, rng);

  // Sorted angles x_1 < ... < x_n are written as x_1 = a + y_1 and
  // x_i = x_{i-1} + eps + y_i with slack y_i >= 0. The sum constraint becomes
  // sum_j (n - j + 1) y_j = slack, which is met exactly by rescaling
  // exponential draws; every pairwise gap is then at least eps.
  const double slack = 360.0 - n * c.min_sector_angle - c.angle_epsilon * n * (n - 1) / 2.0;
  std::vector<double> u(static_cast<std::size_t>(n));
  double weighted = 0;
  for (int j = 0; j < n; ++j) {
    u[static_cast<std::size_t>(j)] = rng.exponential();
    weighted += (n - j) * u[static_cast<std::size_t>(j)];
  }
  std::vector<double> sorted(static_cast<std::size_t>(n));
  double x = c.min_sector_angle - c.angle_epsilon;
  for (int j = 0; j < n; ++j) {
    x += c.angle_epsilon + u[static_cast<std::size_t>(j)] * slack / weighted;
    sorted[static_cast<std::size_t>(j)] = x;
  }
  rng.shuffle(sorted);
  double partial = 0;
  for (int i = 0; i + 1 < n; ++i) {
    spec.sectors[static_cast<std::size_t>(i)].angle = sorted[static_cast<std::size_t>(i)];
    partial += sorted[static_cast<std::size_t>(i)];
  }
  spec.sectors.back().angle = 360.0 - partial;
  return spec;
}

ChartSpec sample_spec(ChartType type, std::uint64_t rng_seed, const GenerationConstraints& constraints) {
  if (type == ChartType::Bar) return sample_bar_spec(rng_seed, constraints);
  return sample_pie_spec(rng_seed, constraints);
}

namespace {

template <class Elems, class SizeOf>
void check_elements(const Elems& elems, const char* what, const GenerationConstraints& c, double epsilon,
                    SizeOf size_of, std::vector<std::string>& v) {
  const int n = static_cast<int>(elems.size());
  if (n < c.min_elements || n > c.max_elements)
    v.push_back(std::string(what) + " count " + std::to_string(n) + " outside [" + std::to_string(c.min_elements) +
                ", " + std::to_string(c.max_elements) + "]");
  std::set<int> colors;
  std::set<std::string> labels;
  const auto& lexicon = label_lexicon();
  for (int i = 0; i < n; ++i) {
    const auto& e = elems[static_cast<std::size_t>(i)];
    if (e.color < 0 || e.color >= static_cast<int>(palette().size()))
      v.push_back(std::string(what) + " " + std::to_string(i) + " has an unknown color");
    else if (!colors.insert(e.color).second)
      v.push_back("duplicate color " + std::string(palette()[static_cast<std::size_t>(e.color)].name));
    if (std::find(lexicon.begin(), lexicon.end(), e.label) == lexicon.end())
      v.push_back(std::string(what) + " " + std::to_string(i) + " label '" + e.label + "' not in lexicon");
    else if (!labels.insert(e.label).second)
      v.push_back("duplicate label " + e.label);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = std::abs(size_of(elems[static_cast<std::size_t>(i)]) - size_of(elems[static_cast<std::size_t>(j)]));
      if (d < epsilon - 1e-9)
        v.push_back(std::string(what) + "s " + std::to_string(i) + " and " + std::to_string(j) +
                    " differ by less than the tie epsilon");
    }
}

}  // namespace

ValidationReport validate_spec(const ChartSpec& spec, const GenerationConstraints& c) {
  ValidationReport report;
  auto& v = report.violations;
  if (const auto* bar = std::get_if<BarChartSpec>(&spec)) {
    check_elements(bar->bars, "bar", c, c.height_epsilon, [](const Bar& b) { return b.height; }, v);
    for (std::size_t i = 0; i < bar->bars.size(); ++i) {
      const double h = bar->bars[i].height;
      if (!(h > 0.0 && h <= 1.0)) v.push_back("bar " + std::to_string(i) + " height outside (0, 1]");
    }
  } else {
    const auto& pie = std::get<PieChartSpec>(spec);
    check_elements(pie.sectors, "sector", c, c.angle_epsilon, [](const Sector& s) { return s.angle; }, v);
    double sum = 0;
    for (std::size_t i = 0; i < pie.sectors.size(); ++i) {
      const double a = pie.sectors[i].angle;
      sum += a;
      if (!(a > 0.0)) v.push_back("sector " + std::to_string(i) + " angle not positive");
      else if (a < c.min_sector_angle - 1e-9)
        v.push_back("sector " + std::to_string(i) + " angle below the minimum sector angle");
    }
    if (std::abs(sum - 360.0) > 1e-9) {
      std::ostringstream os;
      os << "sector angles sum to " << sum << ", not 360";
      v.push_back(os.str());
    }
  }
  return report;
}

nlohmann::json to_json(const ChartSpec& spec) {
  nlohmann::json j;
  if (const auto* bar = std::get_if<BarChartSpec>(&spec)) {
    j["type"] = "bar";
    j["seed"] = bar->seed;
    auto arr = nlohmann::json::array();
    for (const auto& b : bar->bars)
      arr.push_back({{"color", palette().at(static_cast<std::size_t>(b.color)).name}, {"height", b.height}, {"label", b.label}});
    j["bars"] = std::move(arr);
  } else {
    const auto& pie = std::get<PieChartSpec>(spec);
    j["type"] = "pie";
    j["seed"] = pie.seed;
    auto arr = nlohmann::json::array();
    for (const auto& s : pie.sectors)
      arr.push_back({{"color", palette().at(static_cast<std::size_t>(s.color)).name}, {"angle", s.angle}, {"label", s.label}});
    j["sectors"] = std::move(arr);
  }
  return j;
}

ChartSpec spec_from_json(const nlohmann::json& j) {
  try {
    const auto color = [](const nlohmann::json& e) {
      const int c = color_index(e.at("color").get<std::string>());
      if (c < 0) throw Error(ErrorCode::CorruptManifest, "unknown color " + e.at("color").dump());
      return c;
    };
    const std::string type = j.at("type").get<std::string>();
    if (type == "bar") {
      BarChartSpec s;
      s.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& e : j.at("bars"))
        s.bars.push_back(Bar{color(e), e.at("height").get<double>(), e.at("label").get<std::string>()});
      return s;
    }
    if (type == "pie") {
      PieChartSpec s;
      s.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& e : j.at("sectors"))
        s.sectors.push_back(Sector{color(e), e.at("angle").get<double>(), e.at("label").get<std::string>()});
      return s;
    }
    throw Error(ErrorCode::CorruptManifest, "unknown spec type " + type);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, std::string("spec: ") + e.what());
  }
}

std::uint64_t spec_content_hash(const ChartSpec& spec) {
  nlohmann::json j = to_json(spec);
  j.erase("seed");
  return fnv1a(j.dump());
}

}  // namespace chartnet
