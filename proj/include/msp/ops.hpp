#pragma once

#include <array>
#include <vector>

#include "msp/box.hpp"
#include "msp/tensor.hpp"

namespace msp {

// All ops record a backward closure on the tape when tape != nullptr and at
// least one input carries requires_grad. With tape == nullptr they are plain
// forward evaluation.

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);

// Cross-correlation with dilation; w shape (out_c, in_c, kh, kw), b (out_c).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad, int dilation, Tape* tape = nullptr);

// Transposed convolution with integer upsampling factor f: kernel 2f,
// implicit pad ceil(f/2), output exactly (f*h, f*w).
// w shape (in_c, out_c, 2f, 2f).
Tensor deconv2d(const Tensor& x, const Tensor& w, int factor,
                Tape* tape = nullptr);

// Per-axis bilinear weights of length 2f: w(i) = 1 - |i/f - c|,
// c = (2f - 1 - (f mod 2)) / (2f).
std::vector<double> bilinear_kernel_1d(int factor);
// (channels, channels, 2f, 2f) kernel, zero across channels.
Tensor bilinear_deconv_weights(int factor, int channels);

// out[n,c,y,x] = gamma[c] * x[n,c,y,x] / max(||x[n,:,y,x]||_2, epsilon).
Tensor l2norm_scale(const Tensor& x, const Tensor& gamma, double epsilon,
                    Tape* tape = nullptr);

// out[i] = x.data[idx[i]]; backward scatter-adds.
Tensor gather(const Tensor& x, const std::vector<std::int64_t>& idx,
              const Shape& out_shape, Tape* tape = nullptr);

// (N,C,H,W) -> (N,C,1,1), mean over the spatial axes.
Tensor spatial_mean(const Tensor& x, Tape* tape = nullptr);

// logits (N,C,1,1), one label per row in [0,C); mean cross-entropy.
Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                    Tape* tape = nullptr);

// pred/target (N,D,1,1); per-row weights; loss = sum_n w_n * sum_d f(d) / normalizer.
Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target,
                      const std::vector<double>& row_weights, double normalizer,
                      Tape* tape = nullptr);

// Weighted sum of scalar tensors -> scalar.
Tensor scaled_sum(const std::vector<Tensor>& scalars,
                  const std::vector<double>& weights, Tape* tape = nullptr);

struct PsroiLevelMaps {
  Tensor maps;  // (1, k*k*channels, H_l, W_l), channel (i*k+j)*channels + c
  int stride = 0;
};

// Cross-layer position-sensitive RoI pooling: per level, the per-bin mean of
// the bin's own score map over the RoI scaled by 1/stride (floor/ceil bin
// edges, empty bins contribute 0), summed across levels.
// Output (R, channels, k, k).
Tensor psroi_pool(const std::vector<PsroiLevelMaps>& levels,
                  const std::vector<Box>& rois, int k, int channels,
                  Tape* tape = nullptr);

std::vector<double> softmax_vec(const double* logits, int n);

}  // namespace msp
