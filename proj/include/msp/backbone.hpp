#pragma once

#include <vector>

#include "msp/layers.hpp"

namespace msp {

struct BackboneConfig {
  int in_channels = 1;
  std::vector<int> widths{16, 32, 64, 96, 128};
  std::vector<int> blocks{1, 1, 2, 2, 2};
  // First block of stages 2..5 downsamples by 2; extra blocks of stage 5 use
  // dilation 2 so C5 stays at stride 16.
};

struct FeaturePyramid {
  Tensor c3, c4, c5;  // strides 4, 8, 16
  Tensor n3, n4, n5;  // L2-normalized-and-scaled forms
};

struct PaddedImage {
  Tensor tensor;
  std::int64_t orig_h = 0, orig_w = 0;
};

// Zero-pads right/bottom to the next multiple of `stride`.
PaddedImage pad_to_stride(const Tensor& image, int stride);

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, ModelParams& params, Rng& rng);
  // Image dims must be divisible by 16 (use pad_to_stride).
  FeaturePyramid forward(const Tensor& image, Tape* tape = nullptr) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<std::vector<ConvLayer>> stages_;
  L2NormScaleLayer norm3_, norm4_, norm5_;
};

}  // namespace msp
