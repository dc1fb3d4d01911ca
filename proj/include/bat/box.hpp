#pragma once

#include <algorithm>
#include <cmath>

namespace bat {

// Axis-aligned box, top-left convention, pixel units.
struct BBox {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double area() const { return w * h; }

  bool operator==(const BBox&) const = default;
};

inline double center_distance(const BBox& a, const BBox& b) {
  const double dx = a.cx() - b.cx();
  const double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return std::max(0.0, iw) * std::max(0.0, ih);
}

// Overlap ratios derive every width from the rounded interval endpoints
// (x, x+w), never from w itself. Mixing the two sources makes iou(b, b)
// drift off 1 by an ulp, which the strict IoU > 1 threshold in the success
// metric would then count; this form keeps iou(b, b) == 1 and iou <= 1
// exactly.
inline double iou(const BBox& a, const BBox& b) {
  const double ax1 = a.x + a.w, ay1 = a.y + a.h;
  const double bx1 = b.x + b.w, by1 = b.y + b.h;
  const double iw = std::min(ax1, bx1) - std::max(a.x, b.x);
  const double ih = std::min(ay1, by1) - std::max(a.y, b.y);
  const double inter = std::max(0.0, iw) * std::max(0.0, ih);
  const double uni = (ax1 - a.x) * (ay1 - a.y) + (bx1 - b.x) * (by1 - b.y) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// IoU minus the enclosing-box penalty; in [-1, 1], 1 iff identical
// (nonzero-area) boxes.
inline double giou(const BBox& a, const BBox& b) {
  const double ax1 = a.x + a.w, ay1 = a.y + a.h;
  const double bx1 = b.x + b.w, by1 = b.y + b.h;
  const double iw = std::min(ax1, bx1) - std::max(a.x, b.x);
  const double ih = std::min(ay1, by1) - std::max(a.y, b.y);
  const double inter = std::max(0.0, iw) * std::max(0.0, ih);
  const double uni = (ax1 - a.x) * (ay1 - a.y) + (bx1 - b.x) * (by1 - b.y) - inter;
  const double enc = (std::max(ax1, bx1) - std::min(a.x, b.x)) *
                     (std::max(ay1, by1) - std::min(a.y, b.y));
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return enc > 0.0 ? i - (enc - uni) / enc : i;
}

// Clips to [0, fw] x [0, fh], keeping w/h non-negative.
inline BBox clip_box(const BBox& b, double fw, double fh) {
  const double x0 = std::clamp(b.x, 0.0, fw);
  const double y0 = std::clamp(b.y, 0.0, fh);
  const double x1 = std::clamp(b.x + b.w, x0, fw);
  const double y1 = std::clamp(b.y + b.h, y0, fh);
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace bat
