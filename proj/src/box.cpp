#include "msp/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msp {

double overlap(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw Error("overlap: degenerate box");
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_box(const Box& ref, const Box& gt) {
  if (ref.width() <= 0 || ref.height() <= 0 || gt.width() <= 0 || gt.height() <= 0)
    throw Error("encode_box: non-positive box side");
  const double bw = ref.width(), bh = ref.height();
  const double bcx = ref.x_min + 0.5 * bw, bcy = ref.y_min + 0.5 * bh;
  const double gw = gt.width(), gh = gt.height();
  const double gcx = gt.x_min + 0.5 * gw, gcy = gt.y_min + 0.5 * gh;
  return {(gcx - bcx) / bw, (gcy - bcy) / bh, std::log(gw / bw), std::log(gh / bh)};
}

Box decode_box(const Box& ref, const std::array<double, 4>& d) {
  if (ref.width() <= 0 || ref.height() <= 0)
    throw Error("decode_box: non-positive reference side");
  const double bw = ref.width(), bh = ref.height();
  const double bcx = ref.x_min + 0.5 * bw, bcy = ref.y_min + 0.5 * bh;
  const double gcx = bcx + d[0] * bw, gcy = bcy + d[1] * bh;
  const double gw = bw * std::exp(d[2]), gh = bh * std::exp(d[3]);
  return {gcx - 0.5 * gw, gcy - 0.5 * gh, gcx + 0.5 * gw, gcy + 0.5 * gh};
}

Box clip_box(const Box& b, double img_w, double img_h) {
  return {std::clamp(b.x_min, 0.0, img_w), std::clamp(b.y_min, 0.0, img_h),
          std::clamp(b.x_max, 0.0, img_w), std::clamp(b.y_max, 0.0, img_h)};
}

std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_thresh) {
  if (boxes.size() != scores.size()) throw Error("nms: boxes/scores size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] > scores[b];
  });
  std::vector<int> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (int i : order) {
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (int j : order) {
      if (j == i || suppressed[j]) continue;
      if (overlap(boxes[i], boxes[j]) > iou_thresh) suppressed[j] = 1;
    }
  }
  return kept;
}

}  // namespace msp
