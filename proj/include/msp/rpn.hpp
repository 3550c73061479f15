#pragma once

#include <vector>

#include "msp/anchors.hpp"
#include "msp/backbone.hpp"
#include "msp/layers.hpp"

namespace msp {

struct RpnPrediction {
  Tensor objectness;  // (1, 2A, H, W); channel a*2 = background, a*2+1 = object
  Tensor box_deltas;  // (1, 4A, H, W)
  int stride = 0;
};

struct Proposal {
  Box box;
  double score = 0.0;  // objectness probability
};

// out = upsample(coarse, f=2) + finer; coarse stride must be 2x finer stride.
RpnPrediction fuse_predictions(const RpnPrediction& coarse,
                               const RpnPrediction& finer,
                               const DeconvLayer& up_obj,
                               const DeconvLayer& up_box,
                               Tape* tape = nullptr);

// Decode anchors + deltas into scored, clipped, NMS-filtered proposals.
std::vector<Proposal> decode_proposals(const RpnPrediction& pred,
                                       const std::vector<Box>& anchors,
                                       int anchors_per_cell, double img_w,
                                       double img_h, int pre_nms_n,
                                       int post_nms_n, double nms_iou);

}  // namespace msp
