#pragma once

#include <array>
#include <vector>

#include "msp/tensor.hpp"

namespace msp {

// Axis-aligned rectangle in continuous image coordinates.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_max > x_min && y_max > y_min; }
};

// Intersection over union; 0 for disjoint boxes.
double overlap(const Box& a, const Box& b);

// (tx, ty, tw, th) of gt relative to ref; throws on non-positive sides.
std::array<double, 4> encode_box(const Box& ref, const Box& gt);
Box decode_box(const Box& ref, const std::array<double, 4>& d);

Box clip_box(const Box& b, double img_w, double img_h);

// Greedy NMS. Returns kept indices ordered by descending score
// (ties broken by lower index).
std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_thresh);

}  // namespace msp
