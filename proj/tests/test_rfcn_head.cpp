#include <doctest.h>

#include "msp/rfcn_head.hpp"

using namespace msp;

TEST_CASE("head config channel counts") {
  HeadConfig cfg;  // k=3, 4 classes
  CHECK(cfg.cls_channels() == 9 * 5);
  CHECK(cfg.reg_channels() == 36);
}

TEST_CASE("position sensitivity: each bin reads only its own score map") {
  // k=2, 1 channel, one level at stride 1. The RoI covers an 8x8 region; put
  // a distinct constant in each bin's dedicated map region and zeros
  // elsewhere, then verify the pooled grid reproduces exactly those values
  // and nothing leaks across bins.
  const int k = 2, channels = 1;
  PsroiLevelMaps lvl;
  lvl.stride = 1;
  lvl.maps = Tensor(Shape{1, k * k * channels, 8, 8});
  const Box roi{0, 0, 8, 8};
  // Bin (i, j) covers rows [4i, 4i+4) and cols [4j, 4j+4).
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const int ch = (i * k + j) * channels;
      for (int y = 4 * i; y < 4 * i + 4; ++y)
        for (int x = 4 * j; x < 4 * j + 4; ++x)
          lvl.maps.at(0, ch, y, x) = 1.0 + i * 10 + j;
    }
  Tensor pooled = psroi_pool({lvl}, {roi}, k, channels);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      CHECK(pooled.at(0, 0, i, j) == 1.0 + i * 10 + j);  // exact

  // Nonzero response strictly confined to the designated bin: activate one
  // map only and check every other bin is exactly zero.
  Tensor probe(Shape{1, k * k * channels, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) probe.at(0, (1 * k + 0) * channels, y, x) = 7.0;
  PsroiLevelMaps plvl{probe, 1};
  Tensor pp = psroi_pool({plvl}, {roi}, k, channels);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (i == 1 && j == 0)
        CHECK(pp.at(0, 0, i, j) == 7.0);
      else
        CHECK(pp.at(0, 0, i, j) == 0.0);
    }
}

TEST_CASE("cross-layer pooling is a pure sum over levels") {
  const int k = 1, channels = 1;
  PsroiLevelMaps a{Tensor(Shape{1, 1, 8, 8}, 2.0), 1};
  PsroiLevelMaps b{Tensor(Shape{1, 1, 4, 4}, 5.0), 2};
  Tensor pooled = psroi_pool({a, b}, {Box{0, 0, 8, 8}}, k, channels);
  CHECK(pooled.at(0, 0, 0, 0) == 7.0);  // mean 2 + mean 5
}

TEST_CASE("vote_and_classify averages bins then softmaxes") {
  Tensor pooled(Shape{1, 3, 2, 2});
  // Class votes: 1.0, 2.0, 0.0 (constant over bins).
  for (int b = 0; b < 4; ++b) {
    pooled.data()[0 * 4 + b] = 1.0;
    pooled.data()[1 * 4 + b] = 2.0;
    pooled.data()[2 * 4 + b] = 0.0;
  }
  const double votes[3] = {1.0, 2.0, 0.0};
  auto want = softmax_vec(votes, 3);
  auto got = vote_and_classify(pooled, 0);
  REQUIRE(got.size() == 3);
  for (int c = 0; c < 3; ++c) CHECK(got[static_cast<std::size_t>(c)] == doctest::Approx(want[static_cast<std::size_t>(c)]).epsilon(1e-12));
  CHECK_THROWS_AS(vote_and_classify(pooled, 1), Error);
}

TEST_CASE("roi target assignment bands and ordering") {
  std::vector<Box> props{
      {0, 0, 10, 10},    // IoU 1.0 with gt 0 -> positive, class 2
      {0, 0, 10, 18},    // IoU 10/18 ~ 0.55 -> positive
      {0, 6, 10, 16},    // IoU 4/16 = 0.25 -> background
      {40, 40, 50, 50},  // IoU 0 -> neither (below bg_lo)
  };
  std::vector<Box> gts{{0, 0, 10, 10}};
  std::vector<int> cls{2};
  RoiTargets t = assign_roi_targets(props, gts, cls, nullptr, 128);
  REQUIRE(t.num_pos == 2);
  REQUIRE(t.roi_indices.size() == 3);
  CHECK(t.labels[0] == 2);
  CHECK(t.labels[1] == 2);
  CHECK(t.labels[2] == 0);
  CHECK(t.roi_indices[2] == 2);
  // Positive regression targets encode the matched gt.
  auto want = encode_box(props[0], gts[0]);
  std::size_t first = t.roi_indices[0] == 0 ? 0 : 1;
  for (int i = 0; i < 4; ++i)
    CHECK(t.reg_targets[first][static_cast<std::size_t>(i)] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("with no ground truth every proposal is eligible background") {
  std::vector<Box> props{{0, 0, 5, 5}, {10, 10, 20, 20}};
  RoiTargets t = assign_roi_targets(props, {}, {}, nullptr, 128);
  CHECK(t.num_pos == 0);
  CHECK(t.roi_indices.size() == 2);
  CHECK(t.labels[0] == 0);
}

TEST_CASE("roi sampling caps positives at a quarter of the minibatch") {
  Rng rng(31);
  std::vector<Box> props;
  std::vector<Box> gts;
  for (int i = 0; i < 10; ++i) {
    Box b{i * 20.0, 0.0, i * 20.0 + 10.0, 10.0};
    props.push_back(b);
    gts.push_back(b);
  }
  for (int i = 0; i < 30; ++i)
    props.push_back({i * 20.0 + 3.0, 6.0, i * 20.0 + 13.0, 16.0});  // partial IoU
  std::vector<int> cls(10, 1);
  RoiTargets t = assign_roi_targets(props, gts, cls, &rng, 8);
  CHECK(t.num_pos == 2);  // 8 / 4
  CHECK(t.roi_indices.size() == 8);
}
