#pragma once

#include <string>
#include <utility>

#include "msp/ops.hpp"
#include "msp/tensor.hpp"

namespace msp {

// 2-D convolution layer (cross-correlation, no kernel flip).
class ConvLayer {
 public:
  ConvLayer() = default;
  // He fan-in init when init_std < 0, otherwise normal(0, init_std).
  ConvLayer(ModelParams& params, const std::string& name, int in_c, int out_c,
            int ksize, int stride, int pad, int dilation, Rng& rng,
            double init_std = -1.0);
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  Tensor weights, bias;
  int stride = 1, pad = 0, dilation = 1;
};

// Backwards-stride (transposed) convolution upsampling by an integer factor,
// initialized to bilinear interpolation and left trainable.
class DeconvLayer {
 public:
  DeconvLayer() = default;
  DeconvLayer(ModelParams& params, const std::string& name, int channels,
              int factor);
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  Tensor weights;
  int factor = 1;
};

// Per-position channel L2 normalization with a learnable per-channel scale.
class L2NormScaleLayer {
 public:
  L2NormScaleLayer() = default;
  L2NormScaleLayer(ModelParams& params, const std::string& name, int channels,
                   double init_scale = 10.0, double epsilon = 1e-12);
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  Tensor gamma;
  double epsilon = 1e-12;
};

// One 3x3 conv + ReLU feeding two sibling 1x1 convs.
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(ModelParams& params, const std::string& name, int in_c,
                 int mid_c, int cls_c, int box_c, Rng& rng);
  // returns (class branch, box branch); spatial size preserved.
  std::pair<Tensor, Tensor> forward(const Tensor& x, Tape* tape = nullptr) const;

  ConvLayer conv, cls, box;
};

}  // namespace msp
