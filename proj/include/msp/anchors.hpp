#pragma once

#include <array>
#include <vector>

#include "msp/box.hpp"

namespace msp {

struct AnchorConfig {
  double base_size = 8.0;
  std::vector<double> scales{1.0, 2.0, 4.0, 8.0};
  std::vector<double> ratios{0.5, 1.0, 2.0};  // ratio = height / width
  int per_cell() const {
    return static_cast<int>(scales.size() * ratios.size());
  }
};

// One anchor per (position, scale, ratio), centered on grid cell centers.
// Ordering: row-major position, then scale, then ratio.
// Anchor index = ((y*grid_w + x) * |scales| + s) * |ratios| + r.
std::vector<Box> generate_anchors(int grid_h, int grid_w, int stride,
                                  const AnchorConfig& cfg);

struct RpnTargets {
  // Per anchor: 1 positive, 0 negative, -1 ignored (before sampling).
  std::vector<int> labels;
  // Regression target for every positive anchor (zeros elsewhere).
  std::vector<std::array<double, 4>> deltas;
  // Indices of the sampled training minibatch (positives then negatives).
  std::vector<int> sampled;
  int num_sampled_pos = 0;
};

// Positive: IoU >= pos_iou with any gt, or argmax anchor of some gt.
// Negative: max IoU < neg_iou. Others ignored. Samples `minibatch` anchors
// with at most half positives.
RpnTargets assign_rpn_targets(const std::vector<Box>& anchors,
                              const std::vector<Box>& gts, Rng* rng,
                              int minibatch = 256, double pos_iou = 0.7,
                              double neg_iou = 0.3);

}  // namespace msp
