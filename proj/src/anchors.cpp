#include "msp/anchors.hpp"

#include <algorithm>
#include <cmath>

namespace msp {

std::vector<Box> generate_anchors(int grid_h, int grid_w, int stride,
                                  const AnchorConfig& cfg) {
  if (grid_h <= 0 || grid_w <= 0) throw Error("generate_anchors: empty grid");
  if (cfg.scales.empty() || cfg.ratios.empty())
    throw Error("generate_anchors: empty scales or ratios");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(grid_h) * grid_w * cfg.scales.size() *
                  cfg.ratios.size());
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (double s : cfg.scales) {
        const double size = cfg.base_size * s;
        for (double r : cfg.ratios) {
          // Area-preserving across ratios: w*h = size^2, h/w = r.
          const double w = size / std::sqrt(r);
          const double h = size * std::sqrt(r);
          anchors.push_back(
              {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

RpnTargets assign_rpn_targets(const std::vector<Box>& anchors,
                              const std::vector<Box>& gts, Rng* rng,
                              int minibatch, double pos_iou, double neg_iou) {
  const std::size_t A = anchors.size();
  RpnTargets t;
  t.labels.assign(A, -1);
  t.deltas.assign(A, {0.0, 0.0, 0.0, 0.0});

  std::vector<double> max_iou(A, 0.0);
  std::vector<int> argmax_gt(A, -1);
  std::vector<double> gt_best(gts.size(), 0.0);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = overlap(anchors[a], gts[g]);
      if (iou > max_iou[a]) {
        max_iou[a] = iou;
        argmax_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], iou);
    }
  }
  for (std::size_t a = 0; a < A; ++a) {
    bool pos = max_iou[a] >= pos_iou;
    if (!pos && max_iou[a] > 0.0) {
      // Argmax fallback: anchors that tie a gt's best overlap are positive.
      for (std::size_t g = 0; g < gts.size(); ++g)
        if (overlap(anchors[a], gts[g]) >= gt_best[g] - 1e-9 && gt_best[g] > 0.0) {
          pos = true;
          argmax_gt[a] = static_cast<int>(g);
          break;
        }
    }
    if (pos) {
      t.labels[a] = 1;
      t.deltas[a] = encode_box(anchors[a], gts[static_cast<std::size_t>(argmax_gt[a])]);
    } else if (max_iou[a] < neg_iou) {
      t.labels[a] = 0;
    }
  }

  std::vector<int> pos_idx, neg_idx;
  for (std::size_t a = 0; a < A; ++a) {
    if (t.labels[a] == 1) pos_idx.push_back(static_cast<int>(a));
    if (t.labels[a] == 0) neg_idx.push_back(static_cast<int>(a));
  }
  if (rng) {
    std::shuffle(pos_idx.begin(), pos_idx.end(), *rng);
    std::shuffle(neg_idx.begin(), neg_idx.end(), *rng);
  }
  const int want_pos = std::min<int>(minibatch / 2, static_cast<int>(pos_idx.size()));
  const int want_neg =
      std::min<int>(minibatch - want_pos, static_cast<int>(neg_idx.size()));
  t.sampled.assign(pos_idx.begin(), pos_idx.begin() + want_pos);
  t.sampled.insert(t.sampled.end(), neg_idx.begin(), neg_idx.begin() + want_neg);
  t.num_sampled_pos = want_pos;
  return t;
}

}  // namespace msp
