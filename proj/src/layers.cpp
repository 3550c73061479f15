#include "msp/layers.hpp"

#include <cmath>

namespace msp {

ConvLayer::ConvLayer(ModelParams& params, const std::string& name, int in_c,
                     int out_c, int ksize, int stride_, int pad_, int dilation_,
                     Rng& rng, double init_std)
    : stride(stride_), pad(pad_), dilation(dilation_) {
  Tensor w(Shape{out_c, in_c, ksize, ksize});
  const double std =
      init_std >= 0.0 ? init_std : std::sqrt(2.0 / (in_c * ksize * ksize));
  fill_normal(w, rng, std);
  weights = params.add(name + ".w", w);
  bias = params.add(name + ".b", Tensor(Shape{1, out_c, 1, 1}));
}

Tensor ConvLayer::forward(const Tensor& x, Tape* tape) const {
  return conv2d(x, weights, bias, stride, pad, dilation, tape);
}

DeconvLayer::DeconvLayer(ModelParams& params, const std::string& name,
                         int channels, int factor_)
    : factor(factor_) {
  weights = params.add(name + ".w", bilinear_deconv_weights(factor_, channels));
}

Tensor DeconvLayer::forward(const Tensor& x, Tape* tape) const {
  return deconv2d(x, weights, factor, tape);
}

L2NormScaleLayer::L2NormScaleLayer(ModelParams& params, const std::string& name,
                                   int channels, double init_scale,
                                   double epsilon_)
    : epsilon(epsilon_) {
  gamma = params.add(name + ".gamma", Tensor(Shape{1, channels, 1, 1}, init_scale));
}

Tensor L2NormScaleLayer::forward(const Tensor& x, Tape* tape) const {
  return l2norm_scale(x, gamma, epsilon, tape);
}

PredictionHead::PredictionHead(ModelParams& params, const std::string& name,
                               int in_c, int mid_c, int cls_c, int box_c,
                               Rng& rng)
    : conv(params, name + ".conv", in_c, mid_c, 3, 1, 1, 1, rng),
      cls(params, name + ".cls", mid_c, cls_c, 1, 1, 0, 1, rng, 0.01),
      box(params, name + ".box", mid_c, box_c, 1, 1, 0, 1, rng, 0.01) {}

std::pair<Tensor, Tensor> PredictionHead::forward(const Tensor& x,
                                                  Tape* tape) const {
  Tensor mid = relu(conv.forward(x, tape), tape);
  return {cls.forward(mid, tape), box.forward(mid, tape)};
}

}  // namespace msp
