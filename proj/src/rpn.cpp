#include "msp/rpn.hpp"

#include <algorithm>
#include <numeric>

namespace msp {

RpnPrediction fuse_predictions(const RpnPrediction& coarse,
                               const RpnPrediction& finer,
                               const DeconvLayer& up_obj,
                               const DeconvLayer& up_box, Tape* tape) {
  const Shape& cs = coarse.objectness.shape();
  const Shape& fs = finer.objectness.shape();
  if (cs.h * 2 != fs.h || cs.w * 2 != fs.w)
    throw Error("fuse_predictions: coarse " + cs.str() + " is not half of finer " +
                fs.str());
  if (cs.c != fs.c || coarse.box_deltas.shape().c != finer.box_deltas.shape().c)
    throw Error("fuse_predictions: channel count mismatch");
  RpnPrediction out;
  out.objectness = add(up_obj.forward(coarse.objectness, tape), finer.objectness, tape);
  out.box_deltas = add(up_box.forward(coarse.box_deltas, tape), finer.box_deltas, tape);
  out.stride = finer.stride;
  return out;
}

std::vector<Proposal> decode_proposals(const RpnPrediction& pred,
                                       const std::vector<Box>& anchors,
                                       int anchors_per_cell, double img_w,
                                       double img_h, int pre_nms_n,
                                       int post_nms_n, double nms_iou) {
  const Shape& os = pred.objectness.shape();
  const std::int64_t H = os.h, W = os.w;
  if (os.c != 2 * anchors_per_cell)
    throw Error("decode_proposals: objectness channels do not match anchor config");
  if (anchors.size() != static_cast<std::size_t>(H * W * anchors_per_cell))
    throw Error("decode_proposals: anchor count does not match prediction grid");

  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(anchors.size());
  scores.reserve(anchors.size());
  const double* obj = pred.objectness.data();
  const double* del = pred.box_deltas.data();
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (int a = 0; a < anchors_per_cell; ++a) {
        const std::int64_t ai = (y * W + x) * anchors_per_cell + a;
        const double bg = obj[((2 * a) * H + y) * W + x];
        const double fg = obj[((2 * a + 1) * H + y) * W + x];
        const double m = std::max(bg, fg);
        const double eb = std::exp(bg - m), ef = std::exp(fg - m);
        const double score = ef / (eb + ef);
        std::array<double, 4> d;
        for (int t = 0; t < 4; ++t) d[static_cast<std::size_t>(t)] = del[((4 * a + t) * H + y) * W + x];
        Box b = clip_box(decode_box(anchors[static_cast<std::size_t>(ai)], d), img_w, img_h);
        if (b.width() < 1.0 || b.height() < 1.0) continue;
        boxes.push_back(b);
        scores.push_back(score);
      }
    }
  }

  // Top pre_nms_n by score.
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  if (static_cast<int>(order.size()) > pre_nms_n) order.resize(static_cast<std::size_t>(pre_nms_n));

  std::vector<Box> top_boxes;
  std::vector<double> top_scores;
  for (int i : order) {
    top_boxes.push_back(boxes[static_cast<std::size_t>(i)]);
    top_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  std::vector<int> kept = nms(top_boxes, top_scores, nms_iou);
  if (static_cast<int>(kept.size()) > post_nms_n) kept.resize(static_cast<std::size_t>(post_nms_n));

  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (int i : kept)
    out.push_back({top_boxes[static_cast<std::size_t>(i)], top_scores[static_cast<std::size_t>(i)]});
  return out;
}

}  // namespace msp
