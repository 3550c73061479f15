#include "msp/rfcn_head.hpp"

#include <algorithm>

namespace msp {

std::vector<double> vote_and_classify(const Tensor& pooled, std::int64_t row) {
  const Shape& s = pooled.shape();
  if (row < 0 || row >= s.n) throw Error("vote_and_classify: row out of range");
  const std::int64_t bins = s.h * s.w;
  std::vector<double> votes(static_cast<std::size_t>(s.c), 0.0);
  for (std::int64_t c = 0; c < s.c; ++c) {
    const double* p = pooled.data() + (row * s.c + c) * bins;
    double acc = 0.0;
    for (std::int64_t i = 0; i < bins; ++i) acc += p[i];
    votes[static_cast<std::size_t>(c)] = acc / static_cast<double>(bins);
  }
  return softmax_vec(votes.data(), static_cast<int>(s.c));
}

RoiTargets assign_roi_targets(const std::vector<Box>& proposals,
                              const std::vector<Box>& gts,
                              const std::vector<int>& gt_classes, Rng* rng,
                              int minibatch, double fg_iou, double bg_lo) {
  if (gts.size() != gt_classes.size())
    throw Error("assign_roi_targets: gt boxes/classes size mismatch");
  std::vector<int> pos, neg;
  std::vector<int> pos_gt(proposals.size(), -1);
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = overlap(proposals[p], gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= fg_iou) {
      pos.push_back(static_cast<int>(p));
      pos_gt[p] = best_gt;
    } else if (gts.empty() || (best >= bg_lo && best < fg_iou)) {
      neg.push_back(static_cast<int>(p));
    }
  }
  if (rng) {
    std::shuffle(pos.begin(), pos.end(), *rng);
    std::shuffle(neg.begin(), neg.end(), *rng);
  }
  const int want_pos = std::min<int>(minibatch / 4, static_cast<int>(pos.size()));
  const int want_neg = std::min<int>(minibatch - want_pos, static_cast<int>(neg.size()));

  RoiTargets t;
  t.num_pos = want_pos;
  for (int i = 0; i < want_pos; ++i) {
    const int p = pos[static_cast<std::size_t>(i)];
    t.roi_indices.push_back(p);
    t.labels.push_back(gt_classes[static_cast<std::size_t>(pos_gt[static_cast<std::size_t>(p)])]);
    t.reg_targets.push_back(
        encode_box(proposals[static_cast<std::size_t>(p)],
                   gts[static_cast<std::size_t>(pos_gt[static_cast<std::size_t>(p)])]));
  }
  for (int i = 0; i < want_neg; ++i) {
    t.roi_indices.push_back(neg[static_cast<std::size_t>(i)]);
    t.labels.push_back(0);
    t.reg_targets.push_back({0.0, 0.0, 0.0, 0.0});
  }
  return t;
}

}  // namespace msp
