#include "msp/backbone.hpp"

#include <cstring>

namespace msp {

PaddedImage pad_to_stride(const Tensor& image, int stride) {
  const Shape& s = image.shape();
  PaddedImage out;
  out.orig_h = s.h;
  out.orig_w = s.w;
  const std::int64_t ph = (s.h + stride - 1) / stride * stride;
  const std::int64_t pw = (s.w + stride - 1) / stride * stride;
  if (ph == s.h && pw == s.w) {
    out.tensor = image;
    return out;
  }
  Tensor padded(Shape{s.n, s.c, ph, pw});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < s.h; ++y)
        std::memcpy(padded.data() + ((n * s.c + c) * ph + y) * pw,
                    image.data() + ((n * s.c + c) * s.h + y) * s.w,
                    sizeof(double) * static_cast<std::size_t>(s.w));
  out.tensor = padded;
  return out;
}

Backbone::Backbone(const BackboneConfig& cfg, ModelParams& params, Rng& rng)
    : cfg_(cfg) {
  if (cfg.widths.size() != 5 || cfg.blocks.size() != 5)
    throw Error("Backbone: expected 5 stages");
  int in_c = cfg.in_channels;
  for (int s = 0; s < 5; ++s) {
    std::vector<ConvLayer> stage;
    for (int b = 0; b < cfg.blocks[static_cast<std::size_t>(s)]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      const int dilation = (s == 4 && b > 0) ? 2 : 1;
      const int pad = dilation;  // keeps 3x3 output size at stride 1
      const std::string name =
          "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b);
      stage.emplace_back(params, name, in_c, cfg.widths[static_cast<std::size_t>(s)],
                         3, stride, pad, dilation, rng);
      in_c = cfg.widths[static_cast<std::size_t>(s)];
    }
    stages_.push_back(std::move(stage));
  }
  norm3_ = L2NormScaleLayer(params, "backbone.norm3", cfg.widths[2]);
  norm4_ = L2NormScaleLayer(params, "backbone.norm4", cfg.widths[3]);
  norm5_ = L2NormScaleLayer(params, "backbone.norm5", cfg.widths[4]);
}

FeaturePyramid Backbone::forward(const Tensor& image, Tape* tape) const {
  const Shape& s = image.shape();
  if (s.h % 16 != 0 || s.w % 16 != 0)
    throw Error("Backbone::forward: image dims " + s.str() +
                " not divisible by 16; pad_to_stride first");
  FeaturePyramid pyr;
  Tensor x = image;
  for (int st = 0; st < 5; ++st) {
    for (const ConvLayer& layer : stages_[static_cast<std::size_t>(st)])
      x = relu(layer.forward(x, tape), tape);
    if (st == 2) pyr.c3 = x;
    if (st == 3) pyr.c4 = x;
    if (st == 4) pyr.c5 = x;
  }
  pyr.n3 = norm3_.forward(pyr.c3, tape);
  pyr.n4 = norm4_.forward(pyr.c4, tape);
  pyr.n5 = norm5_.forward(pyr.c5, tape);
  return pyr;
}

}  // namespace msp
