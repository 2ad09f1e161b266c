#pragma once

#include <array>

namespace chartnet {

// Unit-normalized box, origin top-left.
struct NormBBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const NormBBox&) const = default;

  std::array<double, 4> as_array() const { return {x_min, y_min, x_max, y_max}; }
  static NormBBox from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  double area() const { return (x_max - x_min) * (y_max - y_min); }
};

// 0 <= min < max <= 1 on both axes.
bool is_valid_box(const NormBBox& b);

// Intersection over union. Throws DegenerateBox if either box has no area.
double iou(const NormBBox& a, const NormBBox& b);

// Sorts each coordinate pair; returns true if anything was swapped.
bool repair_box(NormBBox& b);

}  // namespace chartnet
