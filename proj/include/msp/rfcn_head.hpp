#pragma once

#include <array>
#include <vector>

#include "msp/ops.hpp"

namespace msp {

struct HeadConfig {
  int k = 3;            // bins per axis
  int num_classes = 4;  // foreground classes; class 0 is background
  int cls_channels() const { return k * k * (num_classes + 1); }
  int reg_channels() const { return 4 * k * k; }
};

struct PooledScores {
  Tensor cls;  // (R, C+1, k, k)
  Tensor reg;  // (R, 4, k, k)
};

// k^2 voting: s_c = mean over bins; returns softmax probabilities.
// pooled row r of a (R, C+1, k, k) tensor.
std::vector<double> vote_and_classify(const Tensor& pooled, std::int64_t row);

struct RoiTargets {
  std::vector<int> roi_indices;                 // into the proposal list
  std::vector<int> labels;                      // 0 background, else class id
  std::vector<std::array<double, 4>> reg_targets;  // zeros for background
  int num_pos = 0;                              // positives come first
};

// Positive (class of argmax-IoU gt) if IoU >= fg_iou; background if
// IoU in [bg_lo, fg_iou); samples `minibatch` RoIs at up to 1:3 pos:neg.
// With no gt boxes every proposal is eligible background.
RoiTargets assign_roi_targets(const std::vector<Box>& proposals,
                              const std::vector<Box>& gts,
                              const std::vector<int>& gt_classes, Rng* rng,
                              int minibatch = 128, double fg_iou = 0.5,
                              double bg_lo = 0.1);

}  // namespace msp
