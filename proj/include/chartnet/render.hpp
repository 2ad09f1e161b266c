#pragma once

// Deterministic rasterization of chart specs with exact text bounding boxes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "chartnet/bbox.hpp"
#include "chartnet/chart_model.hpp"

namespace chartnet {

struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const RasterImage&) const = default;
};

struct TextAnnotation {
  std::string element_id;  // "bar:<i>", "sector:<i>" or "tick:<value>"
  std::string text;
  NormBBox bbox;
  bool operator==(const TextAnnotation&) const = default;
};

struct Rendering {
  RasterImage image;
  std::vector<TextAnnotation> annotations;
};

// Layout constants, all in pixels, as a function of the canvas size.
struct RenderConstants {
  int resolution;
  int label_scale;  // glyph magnification for element labels
  int tick_scale;   // glyph magnification for axis tick labels
  int axis_thickness;
  int bar_gap;  // blank columns between adjacent bars
  // Bar plot area: [plot_x0, plot_x1) x [plot_y0, plot_y1); bars stand on plot_y1.
  int plot_x0, plot_x1, plot_y0, plot_y1;
  // Pie geometry.
  double pie_cx, pie_cy, pie_radius, pie_label_radius;
};

RenderConstants render_constants(int resolution);

// Glyph cell is 6 columns (5 plus spacing) by 8 rows (7 plus a descender row).
constexpr int kGlyphAdvance = 6;
constexpr int kGlyphRows = 8;
int text_width(std::string_view text, int scale);

// Throws InvalidSpec if the spec fails validation and PreconditionViolation
// for resolutions below 64.
Rendering render(const ChartSpec& spec, int resolution = 448);

// Annotations only, without rasterizing; identical to render(spec).annotations.
std::vector<TextAnnotation> annotate(const ChartSpec& spec, int resolution = 448);

// Annotation for bar/sector i of the rendered spec.
const TextAnnotation& element_annotation(const std::vector<TextAnnotation>& annotations, ChartType type, int i);

std::uint64_t pixel_hash(const RasterImage& image);

// 8-bit RGB PNG I/O. Throws IoFailure / MissingImage.
void write_png(const std::filesystem::path& path, const RasterImage& image);
RasterImage read_png(const std::filesystem::path& path);

// Area-average downscale by an integer factor (input size must be a multiple of out).
RasterImage downscale(const RasterImage& image, int out_resolution);

// Pixel crop of a normalized box, clamped to the canvas.
RasterImage crop(const RasterImage& image, const NormBBox& box);

}  // namespace chartnet
