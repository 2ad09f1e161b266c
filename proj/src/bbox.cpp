#include "chartnet/bbox.hpp"

#include <algorithm>
#include <utility>

#include "chartnet/error.hpp"

namespace chartnet {

bool is_valid_box(const NormBBox& b) {
  return 0.0 <= b.x_min && b.x_min < b.x_max && b.x_max <= 1.0 && 0.0 <= b.y_min && b.y_min < b.y_max &&
         b.y_max <= 1.0;
}

double iou(const NormBBox& a, const NormBBox& b) {
  if (!(a.x_max > a.x_min && a.y_max > a.y_min) || !(b.x_max > b.x_min && b.y_max > b.y_min))
    throw Error(ErrorCode::DegenerateBox, "iou of a box with zero area");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  if (a == b) return 1.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

bool repair_box(NormBBox& b) {
  bool swapped = false;
  if (b.x_min > b.x_max) {
    std::swap(b.x_min, b.x_max);
    swapped = true;
  }
  if (b.y_min > b.y_max) {
    std::swap(b.y_min, b.y_max);
    swapped = true;
  }
  return swapped;
}

}  // namespace chartnet
