#include <doctest.h>

#include "msp/rpn.hpp"
#include "oracles.hpp"

using namespace msp;

TEST_CASE("fuse_predictions upsamples the coarse level and adds") {
  ModelParams params;
  DeconvLayer up_obj(params, "up.obj", 2, 2);
  DeconvLayer up_box(params, "up.box", 4, 2);

  Rng rng(30);
  RpnPrediction coarse{oracles::random_tensor(Shape{1, 2, 4, 4}, rng),
                       oracles::random_tensor(Shape{1, 4, 4, 4}, rng), 8};
  RpnPrediction finer{oracles::random_tensor(Shape{1, 2, 8, 8}, rng),
                      oracles::random_tensor(Shape{1, 4, 8, 8}, rng), 4};
  RpnPrediction fused = fuse_predictions(coarse, finer, up_obj, up_box);
  CHECK(fused.stride == 4);
  CHECK(fused.objectness.shape() == finer.objectness.shape());

  Tensor up = deconv2d(coarse.objectness, up_obj.weights, 2);
  for (std::int64_t i = 0; i < up.size(); ++i)
    CHECK(fused.objectness.data()[i] ==
          doctest::Approx(up.data()[i] + finer.objectness.data()[i]).epsilon(1e-12));
}

TEST_CASE("fuse_predictions validates grid ratio") {
  ModelParams params;
  DeconvLayer up_obj(params, "a", 2, 2), up_box(params, "b", 4, 2);
  RpnPrediction coarse{Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 4, 4, 4}), 8};
  RpnPrediction bad{Tensor(Shape{1, 2, 7, 8}), Tensor(Shape{1, 4, 7, 8}), 4};
  CHECK_THROWS_AS(fuse_predictions(coarse, bad, up_obj, up_box), Error);
}

namespace {

// One-anchor-per-cell prediction with a single confident cell.
RpnPrediction planted_prediction(int H, int W, int cy, int cx,
                                 const std::array<double, 4>& deltas) {
  RpnPrediction p;
  p.objectness = Tensor(Shape{1, 2, H, W});
  p.box_deltas = Tensor(Shape{1, 4, H, W});
  p.stride = 4;
  // Background logit 4 everywhere, foreground 4 only at the planted cell.
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
    p.objectness.data()[i] = 4.0;
  p.objectness.at(0, 1, cy, cx) = 8.0;
  for (int t = 0; t < 4; ++t) p.box_deltas.at(0, t, cy, cx) = deltas[static_cast<std::size_t>(t)];
  return p;
}

}  // namespace

TEST_CASE("decode_proposals picks the confident cell and applies the deltas") {
  AnchorConfig acfg;
  acfg.scales = {1.0};
  acfg.ratios = {1.0};
  auto anchors = generate_anchors(8, 8, 4, acfg);
  RpnPrediction pred = planted_prediction(8, 8, 3, 5, {0.0, 0.0, 0.0, 0.0});
  auto props = decode_proposals(pred, anchors, 1, 32, 32, 2000, 300, 0.7);
  REQUIRE(!props.empty());
  // Highest score first; its box is the planted cell's anchor.
  const Box& a = anchors[3 * 8 + 5];
  CHECK(props[0].box.x_min == doctest::Approx(a.x_min).epsilon(1e-12));
  CHECK(props[0].box.y_max == doctest::Approx(a.y_max).epsilon(1e-12));
  CHECK(props[0].score > props.back().score);

  // Nonzero deltas shift the decoded box.
  RpnPrediction pred2 = planted_prediction(8, 8, 3, 5, {0.25, 0.0, 0.0, 0.0});
  auto props2 = decode_proposals(pred2, anchors, 1, 32, 32, 2000, 300, 0.7);
  CHECK(props2[0].box.x_min ==
        doctest::Approx(a.x_min + 0.25 * a.width()).epsilon(1e-12));
}

TEST_CASE("decode_proposals clips to the image and drops slivers") {
  AnchorConfig acfg;
  acfg.base_size = 8.0;
  acfg.scales = {1.0, 8.0};  // 64px anchors overflow a 32px image
  acfg.ratios = {1.0};
  auto anchors = generate_anchors(8, 8, 4, acfg);
  RpnPrediction pred;
  pred.objectness = Tensor(Shape{1, 4, 8, 8});
  pred.box_deltas = Tensor(Shape{1, 8, 8, 8});
  pred.stride = 4;
  auto props = decode_proposals(pred, anchors, 2, 32, 32, 2000, 1000, 0.99);
  CHECK(!props.empty());
  for (const Proposal& p : props) {
    CHECK(p.box.x_min >= 0.0);
    CHECK(p.box.y_min >= 0.0);
    CHECK(p.box.x_max <= 32.0);
    CHECK(p.box.y_max <= 32.0);
    CHECK(p.box.width() >= 1.0);
    CHECK(p.box.height() >= 1.0);
  }
}

TEST_CASE("decode_proposals respects the post-NMS cap") {
  AnchorConfig acfg;
  acfg.scales = {1.0};
  acfg.ratios = {1.0};
  auto anchors = generate_anchors(16, 16, 4, acfg);
  RpnPrediction pred;
  pred.objectness = Tensor(Shape{1, 2, 16, 16});
  pred.box_deltas = Tensor(Shape{1, 4, 16, 16});
  pred.stride = 4;
  auto props = decode_proposals(pred, anchors, 1, 64, 64, 2000, 10, 0.9);
  CHECK(props.size() <= 10);
  CHECK_THROWS_AS(decode_proposals(pred, anchors, 2, 64, 64, 2000, 10, 0.9), Error);
}
