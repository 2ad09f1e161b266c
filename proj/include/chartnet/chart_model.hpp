#pragma once

// Symbolic chart descriptions. A spec is the single source of truth from
// which both the rendered pixels and the ground-truth answers are derived.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace chartnet {

struct ColorName {
  std::string_view name;
  std::array<std::uint8_t, 3> rgb;
};

// Fixed, ordered palette. Specs refer to colors by index into this list.
const std::vector<ColorName>& palette();
// Palette index for a name, or -1.
int color_index(std::string_view name);

// Fixed lexicon of short element labels (at most four characters each).
const std::vector<std::string>& label_lexicon();

enum class ChartType { Bar, Pie };
std::string_view to_string(ChartType t);
ChartType chart_type_from_string(std::string_view s);

struct Bar {
  int color = 0;        // palette index
  double height = 0.0;  // fraction of the y-axis range, in (0, 1]
  std::string label;
  bool operator==(const Bar&) const = default;
};

struct BarChartSpec {
  std::vector<Bar> bars;  // left to right
  std::uint64_t seed = 0;
  bool operator==(const BarChartSpec&) const = default;
};

struct Sector {
  int color = 0;
  double angle = 0.0;  // degrees
  std::string label;
  bool operator==(const Sector&) const = default;
};

struct PieChartSpec {
  std::vector<Sector> sectors;  // clockwise starting at 12 o'clock
  std::uint64_t seed = 0;
  bool operator==(const PieChartSpec&) const = default;
};

using ChartSpec = std::variant<BarChartSpec, PieChartSpec>;

ChartType chart_type(const ChartSpec& spec);
// Number of bars or sectors.
int element_count(const ChartSpec& spec);
int element_color(const ChartSpec& spec, int i);
// Height for bars, angle for sectors.
double element_size(const ChartSpec& spec, int i);
const std::string& element_label(const ChartSpec& spec, int i);

struct GenerationConstraints {
  int min_elements = 2;
  int max_elements = 8;
  double min_height = 0.1;
  double height_epsilon = 0.05;
  double angle_epsilon = 10.0;
  // Lower bound on sector angles; keeps outside labels of adjacent sectors apart.
  double min_sector_angle = 15.0;
  int max_rejections = 100000;
};

BarChartSpec sample_bar_spec(std::uint64_t rng_seed, const GenerationConstraints& constraints = {});
PieChartSpec sample_pie_spec(std::uint64_t rng_seed, const GenerationConstraints& constraints = {});
ChartSpec sample_spec(ChartType type, std::uint64_t rng_seed, const GenerationConstraints& constraints = {});

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_spec(const ChartSpec& spec, const GenerationConstraints& constraints = {});

nlohmann::json to_json(const ChartSpec& spec);
ChartSpec spec_from_json(const nlohmann::json& j);
// Stable hash of the canonical JSON form; used for split disjointness.
std::uint64_t spec_content_hash(const ChartSpec& spec);

}  // namespace chartnet
