#ifndef PYRABOX_BOX_HPP_
#define PYRABOX_BOX_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pyrabox/errors.hpp"

namespace pyrabox {

// Axis-aligned box, half-open continuous region: area = w * h.
struct BoxPx {
  double x = 0, y = 0, w = 0, h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }
  // geometric-mean side, the "size" used for anchor matching
  double side() const { return std::sqrt(w * h); }
};

struct Detection {
  BoxPx box;
  double score = 0;
  int class_id = 0;
};

inline double iou(const BoxPx& a, const BoxPx& b) {
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Scaling about the image origin: every coordinate multiplied.
inline BoxPx scale_box(const BoxPx& b, double factor) {
  if (factor <= 0) throw contract_error("scale_box: factor must be positive");
  return {b.x * factor, b.y * factor, b.w * factor, b.h * factor};
}

inline BoxPx clip_box(const BoxPx& b, double w, double h) {
  double x1 = std::clamp(b.x, 0.0, w), y1 = std::clamp(b.y, 0.0, h);
  double x2 = std::clamp(b.x2(), 0.0, w), y2 = std::clamp(b.y2(), 0.0, h);
  return {x1, y1, x2 - x1, y2 - y1};
}

// Greedy descending-score NMS. Ties broken by input index (earlier wins);
// output sorted by score descending.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(dets[idx].box, k.box) > iou_threshold) { suppressed = true; break; }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

}  // namespace pyrabox

#endif  // PYRABOX_BOX_HPP_
