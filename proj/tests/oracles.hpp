// Independent reference implementations used to cross-check the library:
// literal triple-loop versions with no shared code paths beyond the public
// data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "msp/box.hpp"
#include "msp/eval.hpp"
#include "msp/ops.hpp"
#include "msp/tensor.hpp"

namespace oracles {

using msp::Box;
using msp::Shape;
using msp::Tensor;

inline Tensor random_tensor(const Shape& s, msp::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(s);
  msp::fill_uniform(t, rng, lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker.
// f(tape) must rebuild the same scalar loss from the given inputs each call.
// Returns the max relative error over all input elements.
inline double fd_max_rel_error(std::vector<Tensor>& inputs,
                               const std::function<Tensor(msp::Tape*)>& f,
                               double eps = 1e-6) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  msp::Tape tape;
  Tensor loss = f(&tape);
  tape.backward(loss);
  double worst = 0.0;
  for (Tensor& t : inputs) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + eps;
      const double lp = f(nullptr).value();
      t.data()[i] = orig - eps;
      const double lm = f(nullptr).value();
      t.data()[i] = orig;
      const double num = (lp - lm) / (2.0 * eps);
      const double ana = t.grad_data()[i];
      const double rel = std::abs(num - ana) /
                         std::max({1.0, std::abs(num), std::abs(ana)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Brute-force cross-correlation with stride/pad/dilation.
inline Tensor brute_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                           int stride, int pad, int dilation) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::int64_t oh = (xs.h + 2 * pad - dilation * (ws.h - 1) - 1) / stride + 1;
  const std::int64_t ow = (xs.w + 2 * pad - dilation * (ws.w - 1) - 1) / stride + 1;
  Tensor out(Shape{xs.n, ws.n, oh, ow});
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t oc = 0; oc < ws.n; ++oc)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = b.data()[oc];
          for (std::int64_t ic = 0; ic < xs.c; ++ic)
            for (std::int64_t ky = 0; ky < ws.h; ++ky)
              for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky * dilation;
                const std::int64_t ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          out.at(n, oc, oy, ox) = acc;
        }
  return out;
}

// ---------------------------------------------------------------------------
// Direct bilinear upsampling (half-pixel-centre convention): the value at
// output pixel (y, x) is the interpolation of the input at
// ((y+0.5)/f - 0.5, (x+0.5)/f - 0.5), coordinates clamped to the image.
inline Tensor bilinear_upsample(const Tensor& x, int f) {
  const Shape& s = x.shape();
  Tensor out(Shape{s.n, s.c, s.h * f, s.w * f});
  auto sample = [&](std::int64_t n, std::int64_t c, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
    const std::int64_t y1 = std::min(y0 + 1, s.h - 1);
    const std::int64_t x1 = std::min(x0 + 1, s.w - 1);
    const double fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
           fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
  };
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < s.h * f; ++y)
        for (std::int64_t x2 = 0; x2 < s.w * f; ++x2)
          out.at(n, c, y, x2) =
              sample(n, c, (y + 0.5) / f - 0.5, (x2 + 0.5) / f - 0.5);
  return out;
}

// True when output pixel (y, x) needs no border clamping, i.e. the sample
// point falls strictly inside the input grid.
inline bool bilinear_interior(std::int64_t y, std::int64_t x, int f,
                              std::int64_t in_h, std::int64_t in_w) {
  const double sy = (y + 0.5) / f - 0.5;
  const double sx = (x + 0.5) / f - 0.5;
  return sy >= 0.0 && sy <= in_h - 1.0 && sx >= 0.0 && sx <= in_w - 1.0;
}

// ---------------------------------------------------------------------------
// Literal triple-loop cross-layer position-sensitive pooling (Eq. 1):
// r(i,j|c) = sum over levels l of (1/n_l) * sum_{(x,y) in bin(i,j)_l}
//            z_{(i*k+j)*C + c}^l (x, y), with floor/ceil-quantized bin edges
// on the RoI scaled by 1 / stride_l and empty bins contributing zero.
inline Tensor brute_psroi(const std::vector<msp::PsroiLevelMaps>& levels,
                          const std::vector<Box>& rois, int k, int channels) {
  Tensor out(Shape{static_cast<std::int64_t>(rois.size()), channels, k, k});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        for (int c = 0; c < channels; ++c) {
          double total = 0.0;
          for (const auto& lvl : levels) {
            const Shape& ms = lvl.maps.shape();
            const double x0 = rois[r].x_min / lvl.stride;
            const double y0 = rois[r].y_min / lvl.stride;
            const double bw = (rois[r].x_max - rois[r].x_min) / lvl.stride / k;
            const double bh = (rois[r].y_max - rois[r].y_min) / lvl.stride / k;
            const std::int64_t ys = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(std::floor(y0 + i * bh)), 0, ms.h);
            const std::int64_t ye = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(std::ceil(y0 + (i + 1) * bh)), 0, ms.h);
            const std::int64_t xs = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(std::floor(x0 + j * bw)), 0, ms.w);
            const std::int64_t xe = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(std::ceil(x0 + (j + 1) * bw)), 0, ms.w);
            const std::int64_t npix = (ye > ys && xe > xs) ? (ye - ys) * (xe - xs) : 0;
            if (npix == 0) continue;
            double acc = 0.0;
            for (std::int64_t y = ys; y < ye; ++y)
              for (std::int64_t x = xs; x < xe; ++x)
                acc += lvl.maps.at(0, (i * k + j) * channels + c, y, x);
            total += acc / static_cast<double>(npix);
          }
          out.at(static_cast<std::int64_t>(r), c, i, j) = total;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// O(n^2) greedy NMS reference.
inline std::vector<int> brute_nms(const std::vector<Box>& boxes,
                                  const std::vector<double>& scores,
                                  double iou_thresh) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<int> kept;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)]))
        best = static_cast<int>(i);
    if (best < 0) break;
    kept.push_back(best);
    alive[static_cast<std::size_t>(best)] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] &&
          msp::overlap(boxes[static_cast<std::size_t>(best)], boxes[i]) > iou_thresh)
        alive[i] = false;
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Independent greedy matcher (used only inside the sweep oracle): detections
// by descending score, each taken by the highest-overlap unmatched in-level
// gt with overlap > iou_thresh; unmatched detections overlapping an
// out-of-level gt are ignored, the rest are false positives.
struct BruteCounts {
  std::int64_t tp = 0, fp = 0;
};

inline BruteCounts brute_match_counts(std::vector<msp::Detection> dl,
                                      const std::vector<msp::GroundTruth>& gl,
                                      double iou_thresh,
                                      const msp::EvalLevel& level) {
  std::stable_sort(dl.begin(), dl.end(), [](const auto& a, const auto& b) {
    return a.score > b.score;
  });
  std::vector<bool> used(gl.size(), false);
  BruteCounts out;
  for (const auto& d : dl) {
    double best = iou_thresh;
    int pick = -1;
    for (std::size_t g = 0; g < gl.size(); ++g) {
      const double h = gl[g].height();
      if (used[g] || h < level.min_height || h >= level.max_height) continue;
      const double iou = msp::overlap(d.box, gl[g].box);
      if (iou > best) {
        best = iou;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = true;
      ++out.tp;
      continue;
    }
    bool ignored = false;
    for (std::size_t g = 0; g < gl.size(); ++g) {
      const double h = gl[g].height();
      if (h >= level.min_height && h < level.max_height) continue;
      if (msp::overlap(d.box, gl[g].box) > iou_thresh) {
        ignored = true;
        break;
      }
    }
    if (!ignored) ++out.fp;
  }
  return out;
}

// Threshold-sweep AP: for every distinct score threshold, re-match the
// detections above it from scratch, then integrate all-points AP with an
// O(n^2) max-precision scan.
inline double sweep_ap(const std::vector<msp::Detection>& dets,
                       const std::vector<msp::GroundTruth>& gts,
                       const msp::EvalLevel& level, double iou_thresh) {
  std::int64_t num_gt = 0;
  for (const auto& g : gts)
    if (g.height() >= level.min_height && g.height() < level.max_height) ++num_gt;
  if (num_gt == 0) return std::nan("");

  std::set<double, std::greater<double>> thresholds;
  for (const auto& d : dets) thresholds.insert(d.score);
  std::map<std::string, std::vector<msp::GroundTruth>> gts_by_img;
  for (const auto& g : gts) gts_by_img[g.image_id].push_back(g);

  std::vector<double> precision, recall;
  for (double t : thresholds) {
    std::int64_t tp = 0, fp = 0;
    std::map<std::string, std::vector<msp::Detection>> by_img;
    for (const auto& d : dets)
      if (d.score >= t) by_img[d.image_id].push_back(d);
    for (const auto& [img, dl] : by_img) {
      static const std::vector<msp::GroundTruth> none;
      auto it = gts_by_img.find(img);
      const auto& gl = it == gts_by_img.end() ? none : it->second;
      const BruteCounts c = brute_match_counts(dl, gl, iou_thresh, level);
      tp += c.tp;
      fp += c.fp;
    }
    precision.push_back(tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0);
    recall.push_back(static_cast<double>(tp) / num_gt);
  }

  double ap = 0.0;
  for (std::size_t k2 = 0; k2 < recall.size(); ++k2) {
    const double r_prev = k2 == 0 ? 0.0 : recall[k2 - 1];
    double pmax = 0.0;
    for (std::size_t j = k2; j < recall.size(); ++j) pmax = std::max(pmax, precision[j]);
    ap += (recall[k2] - r_prev) * pmax;
  }
  return ap;
}

}  // namespace oracles
