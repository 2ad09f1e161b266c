#include "chartnet/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "chartnet/error.hpp"
#include "chartnet/hash.hpp"
#include "font.hpp"

namespace chartnet {

namespace {

constexpr std::array<std::uint8_t, 3> kBlack = {0, 0, 0};

int max_label_chars() {
  std::size_t m = 0;
  for (const auto& l : label_lexicon()) m = std::max(m, l.size());
  return static_cast<int>(m);
}

void fill_rect(RasterImage& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& rgb) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width);
  y1 = std::min(y1, img.height);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) std::copy(rgb.begin(), rgb.end(), img.at(x, y));
}

// Draws text with its glyph cell's top-left at (x, y) and returns the padded,
// canvas-clipped bounding box of the cell.
// Draws nothing when img is null.
NormBBox draw_text(RasterImage* img, int R, std::string_view text, int x, int y, int scale) {
  for (std::size_t k = 0; img && k < text.size(); ++k) {
    const auto& cols = detail::glyph(text[k]);
    for (int j = 0; j < 5; ++j)
      for (int r = 0; r < kGlyphRows; ++r)
        if ((cols[static_cast<std::size_t>(j)] >> r) & 1) {
          const int px = x + (static_cast<int>(k) * kGlyphAdvance + j) * scale;
          const int py = y + r * scale;
          fill_rect(*img, px, py, px + scale, py + scale, kBlack);
        }
  }
  const int pad = scale;
  const int x0 = std::max(0, x - pad), y0 = std::max(0, y - pad);
  const int x1 = std::min(R, x + text_width(text, scale) + pad);
  const int y1 = std::min(R, y + kGlyphRows * scale + pad);
  const double r = R;
  return {x0 / r, y0 / r, x1 / r, y1 / r};
}

void render_bars(const BarChartSpec& spec, const RenderConstants& k, RasterImage* img,
                 std::vector<TextAnnotation>& out) {
  const int n = static_cast<int>(spec.bars.size());
  const int plot_h = k.plot_y1 - k.plot_y0;
  const double slot = static_cast<double>(k.plot_x1 - k.plot_x0) / n;
  const int inset = k.bar_gap / 2;
  std::vector<int> edges(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) edges[static_cast<std::size_t>(i)] = k.plot_x0 + static_cast<int>(std::lround(i * slot));

  for (int i = 0; img && i < n; ++i) {
    const auto& bar = spec.bars[static_cast<std::size_t>(i)];
    const int hp = static_cast<int>(std::lround(bar.height * plot_h));
    fill_rect(*img, edges[static_cast<std::size_t>(i)] + inset, k.plot_y1 - hp,
              edges[static_cast<std::size_t>(i) + 1] - inset, k.plot_y1, palette()[static_cast<std::size_t>(bar.color)].rgb);
  }

  const int a = k.axis_thickness, ts = k.tick_scale, ls = k.label_scale;
  if (img) {
    fill_rect(*img, k.plot_x0 - a, k.plot_y0, k.plot_x0, k.plot_y1 + a, kBlack);
    fill_rect(*img, k.plot_x0 - a, k.plot_y1, k.plot_x1, k.plot_y1 + a, kBlack);
  }

  for (int t = 0; t <= 5; ++t) {
    const int y = k.plot_y1 - static_cast<int>(std::lround(t / 5.0 * plot_h));
    if (img) fill_rect(*img, k.plot_x0 - a - 3 * ts, y, k.plot_x0 - a, y + ts, kBlack);
    char buf[8];
    std::snprintf(buf, sizeof buf, "%.1f", t / 5.0);
    const NormBBox box = draw_text(img, k.resolution, buf, 2 * ts, y - kGlyphRows * ts / 2, ts);
    out.push_back({std::string("tick:") + buf, buf, box});
  }

  for (int i = 0; i < n; ++i) {
    const auto& label = spec.bars[static_cast<std::size_t>(i)].label;
    const int w = text_width(label, ls);
    const int cx2 = edges[static_cast<std::size_t>(i)] + edges[static_cast<std::size_t>(i) + 1];
    const NormBBox box = draw_text(img, k.resolution, label, (cx2 - w) / 2, k.plot_y1 + a + 2 * ls, ls);
    out.push_back({"bar:" + std::to_string(i), label, box});
  }
}

void render_pie(const PieChartSpec& spec, const RenderConstants& k, RasterImage* img,
                std::vector<TextAnnotation>& out) {
  const int n = static_cast<int>(spec.sectors.size());
  std::vector<double> ends(static_cast<std::size_t>(n));
  double acc = 0;
  for (int i = 0; i < n; ++i) ends[static_cast<std::size_t>(i)] = acc += spec.sectors[static_cast<std::size_t>(i)].angle;

  const double r2 = k.pie_radius * k.pie_radius;
  for (int y = 0; img && y < img->height; ++y)
    for (int x = 0; x < img->width; ++x) {
      const double dx = x + 0.5 - k.pie_cx, dy = y + 0.5 - k.pie_cy;
      if (dx * dx + dy * dy > r2) continue;
      // Clockwise from 12 o'clock.
      double theta = std::atan2(dx, -dy) * 180.0 / std::numbers::pi;
      if (theta < 0) theta += 360.0;
      int s = static_cast<int>(std::upper_bound(ends.begin(), ends.end(), theta) - ends.begin());
      s = std::min(s, n - 1);
      const auto& rgb = palette()[static_cast<std::size_t>(spec.sectors[static_cast<std::size_t>(s)].color)].rgb;
      std::copy(rgb.begin(), rgb.end(), img->at(x, y));
    }

  const int ls = k.label_scale;
  double start = 0;
  for (int i = 0; i < n; ++i) {
    const auto& sec = spec.sectors[static_cast<std::size_t>(i)];
    const double mid = (start + sec.angle / 2) * std::numbers::pi / 180.0;
    start += sec.angle;
    const double cx = k.pie_cx + k.pie_label_radius * std::sin(mid);
    const double cy = k.pie_cy - k.pie_label_radius * std::cos(mid);
    const int w = text_width(sec.label, ls);
    const int x = static_cast<int>(std::lround(cx - w / 2.0));
    const int y = static_cast<int>(std::lround(cy - kGlyphRows * ls / 2.0));
    out.push_back({"sector:" + std::to_string(i), sec.label, draw_text(img, k.resolution, sec.label, x, y, ls)});
  }
}

}  // namespace

int text_width(std::string_view text, int scale) {
  if (text.empty()) return 0;
  return (static_cast<int>(text.size()) * kGlyphAdvance - 1) * scale;
}

RenderConstants render_constants(int R) {
  RenderConstants k{};
  k.resolution = R;
  k.label_scale = std::max(1, R / 224);
  k.tick_scale = std::max(1, R / 448);
  k.axis_thickness = std::max(1, R / 224);
  k.bar_gap = 2;
  const int ts = k.tick_scale, ls = k.label_scale, a = k.axis_thickness;
  k.plot_x0 = 2 * ts + text_width("0.0", ts) + 4 * ts + a;
  k.plot_x1 = R - 4 * ts;
  k.plot_y0 = std::max(static_cast<int>(std::lround(0.05 * R)), 5 * ts + 1);
  // Label row below the x axis: gap, glyph cell, padding and margin.
  k.plot_y1 = R - a - 13 * ls;

  k.pie_cx = k.pie_cy = R / 2.0;
  const double half_w = text_width(std::string(static_cast<std::size_t>(max_label_chars()), 'W'), ls) / 2.0 + ls;
  const double half_h = kGlyphRows * ls / 2.0 + ls;
  k.pie_label_radius = R / 2.0 - 2 * ls - half_w;
  k.pie_radius = k.pie_label_radius - std::hypot(half_w, half_h) - 2 * ls;
  return k;
}

namespace {

void check_render_input(const ChartSpec& spec, int resolution) {
  if (resolution < 64)
    throw Error(ErrorCode::PreconditionViolation, "render resolution must be at least 64, got " + std::to_string(resolution));
  if (const auto report = validate_spec(spec); !report.ok())
    throw Error(ErrorCode::InvalidSpec, "cannot render invalid spec: " + report.violations.front());
}

void lay_out(const ChartSpec& spec, int resolution, RasterImage* img, std::vector<TextAnnotation>& out) {
  const auto k = render_constants(resolution);
  if (const auto* bar = std::get_if<BarChartSpec>(&spec))
    render_bars(*bar, k, img, out);
  else
    render_pie(std::get<PieChartSpec>(spec), k, img, out);
}

}  // namespace

std::vector<TextAnnotation> annotate(const ChartSpec& spec, int resolution) {
  check_render_input(spec, resolution);
  std::vector<TextAnnotation> out;
  lay_out(spec, resolution, nullptr, out);
  return out;
}

Rendering render(const ChartSpec& spec, int resolution) {
  check_render_input(spec, resolution);
  Rendering r;
  r.image.width = r.image.height = resolution;
  r.image.pixels.assign(static_cast<std::size_t>(resolution) * resolution * 3, 255);
  lay_out(spec, resolution, &r.image, r.annotations);
  return r;
}

const TextAnnotation& element_annotation(const std::vector<TextAnnotation>& annotations, ChartType type, int i) {
  const std::string id = std::string(type == ChartType::Bar ? "bar:" : "sector:") + std::to_string(i);
  for (const auto& a : annotations)
    if (a.element_id == id) return a;
  throw Error(ErrorCode::CorruptManifest, "no annotation for " + id);
}

std::uint64_t pixel_hash(const RasterImage& image) {
  Fnv1a h;
  h.update(std::to_string(image.width) + "x" + std::to_string(image.height));
  h.update(image.pixels);
  return h.digest();
}

RasterImage downscale(const RasterImage& image, int out) {
  if (out <= 0 || image.width != image.height || image.width % out != 0)
    throw Error(ErrorCode::ShapeMismatch, "cannot downscale " + std::to_string(image.width) + "x" +
                                              std::to_string(image.height) + " to " + std::to_string(out));
  const int f = image.width / out;
  if (f == 1) return image;
  RasterImage r;
  r.width = r.height = out;
  r.pixels.resize(static_cast<std::size_t>(out) * out * 3);
  const int area = f * f;
  for (int y = 0; y < out; ++y)
    for (int x = 0; x < out; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) sum += image.at(x * f + dx, y * f + dy)[c];
        r.at(x, y)[c] = static_cast<std::uint8_t>((sum + area / 2) / area);
      }
  return r;
}

RasterImage crop(const RasterImage& image, const NormBBox& box) {
  const auto clampi = [](double v, int hi) { return std::clamp(static_cast<int>(v), 0, hi); };
  const int x0 = clampi(std::floor(box.x_min * image.width), image.width - 1);
  const int y0 = clampi(std::floor(box.y_min * image.height), image.height - 1);
  const int x1 = std::max(x0 + 1, clampi(std::ceil(box.x_max * image.width), image.width));
  const int y1 = std::max(y0 + 1, clampi(std::ceil(box.y_max * image.height), image.height));
  RasterImage r;
  r.width = x1 - x0;
  r.height = y1 - y0;
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * 3);
  for (int y = 0; y < r.height; ++y)
    std::copy_n(image.at(x0, y0 + y), static_cast<std::size_t>(r.width) * 3, r.at(0, y));
  return r;
}

}  // namespace chartnet
