#include "msp/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace msp {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowConst = Eigen::Map<const RowMat>;

static bool tracked(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  if (!(a.shape() == b.shape()))
    throw Error("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  check_finite(out, "add");
  if (tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const double* g = oc.grad_data();
      const std::int64_t n = oc.size();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (!(a.shape() == b.shape()))
    throw Error("mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  check_finite(out, "mul");
  if (tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const double* g = oc.grad_data();
      const std::int64_t n = oc.size();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        const double* pb2 = bc.data();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        const double* pa2 = ac.data();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const double* g = oc.grad_data();
      const double* px2 = xc.data();
      double* gx = xc.grad();
      for (std::int64_t i = 0; i < oc.size(); ++i)
        if (px2[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
  double s = 0.0;
  const double* px = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i) s += px[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const double g = oc.grad_data()[0];
      double* gx = xc.grad();
      for (std::int64_t i = 0; i < xc.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

namespace {

struct ConvGeom {
  std::int64_t in_c, in_h, in_w, out_c, kh, kw, out_h, out_w;
  int stride, pad, dilation;
};

void im2col(const double* x, const ConvGeom& g, RowMat& col) {
  // col is (in_c*kh*kw) x (out_h*out_w), row-major
  for (std::int64_t ic = 0; ic < g.in_c; ++ic) {
    const double* xc = x + ic * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        double* row = col.data() + ((ic * g.kh + ky) * g.kw + kx) * g.out_h * g.out_w;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky * g.dilation;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& col, const ConvGeom& g, double* gx) {
  for (std::int64_t ic = 0; ic < g.in_c; ++ic) {
    double* gc = gx + ic * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const double* row =
            col.data() + ((ic * g.kh + ky) * g.kw + kx) * g.out_h * g.out_w;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const double* src = row + oy * g.out_w;
          double* dst = gc + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx * g.dilation;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad, int dilation, Tape* tape) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (stride < 1 || pad < 0 || dilation < 1)
    throw Error("conv2d: invalid stride/pad/dilation");
  if (ws.c != xs.c)
    throw Error("conv2d: channel mismatch, input " + xs.str() + " weights " + ws.str());
  if (b.size() != ws.n) throw Error("conv2d: bias size mismatch");
  ConvGeom g;
  g.in_c = xs.c;
  g.in_h = xs.h;
  g.in_w = xs.w;
  g.out_c = ws.n;
  g.kh = ws.h;
  g.kw = ws.w;
  g.stride = stride;
  g.pad = pad;
  g.dilation = dilation;
  g.out_h = (xs.h + 2 * pad - static_cast<std::int64_t>(dilation) * (ws.h - 1) - 1) / stride + 1;
  g.out_w = (xs.w + 2 * pad - static_cast<std::int64_t>(dilation) * (ws.w - 1) - 1) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0)
    throw Error("conv2d: non-positive output size for input " + xs.str());

  const std::int64_t K = g.in_c * g.kh * g.kw;
  const std::int64_t M = g.out_h * g.out_w;
  Tensor out(Shape{xs.n, g.out_c, g.out_h, g.out_w});
  MapRowConst Wm(w.data(), g.out_c, K);
  Eigen::Map<const Eigen::VectorXd> bv(b.data(), g.out_c);

  const bool rec = tracked(tape, {&x, &w, &b});
  auto cols = std::make_shared<std::vector<RowMat>>();
  RowMat col(K, M);
  for (std::int64_t n = 0; n < xs.n; ++n) {
    im2col(x.data() + n * g.in_c * g.in_h * g.in_w, g, col);
    MapRow Ym(out.data() + n * g.out_c * M, g.out_c, M);
    Ym.noalias() = Wm * col;
    Ym.colwise() += bv;
    if (rec) cols->push_back(col);
  }
  check_finite(out, "conv2d");

  if (rec) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = b, oc = out;
    ConvGeom gg = g;
    tape->record([xc, wc, bc, oc, gg, cols]() mutable {
      const std::int64_t K2 = gg.in_c * gg.kh * gg.kw;
      const std::int64_t M2 = gg.out_h * gg.out_w;
      MapRowConst Wm2(wc.data(), gg.out_c, K2);
      for (std::int64_t n = 0; n < xc.shape().n; ++n) {
        MapRowConst dY(oc.grad_data() + n * gg.out_c * M2, gg.out_c, M2);
        if (wc.requires_grad()) {
          MapRow dW(wc.grad(), gg.out_c, K2);
          dW.noalias() += dY * (*cols)[static_cast<std::size_t>(n)].transpose();
        }
        if (bc.requires_grad()) {
          Eigen::Map<Eigen::VectorXd> db(bc.grad(), gg.out_c);
          db.noalias() += dY.rowwise().sum();
        }
        if (xc.requires_grad()) {
          RowMat dcol = Wm2.transpose() * dY;
          col2im_add(dcol, gg, xc.grad() + n * gg.in_c * gg.in_h * gg.in_w);
        }
      }
    });
  }
  return out;
}

std::vector<double> bilinear_kernel_1d(int factor) {
  if (factor < 1) throw Error("bilinear_kernel_1d: factor must be >= 1");
  const int k = 2 * factor;
  const double c = (2.0 * factor - 1.0 - (factor % 2)) / (2.0 * factor);
  std::vector<double> w(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    w[static_cast<std::size_t>(i)] = 1.0 - std::abs(static_cast<double>(i) / factor - c);
  return w;
}

Tensor bilinear_deconv_weights(int factor, int channels) {
  const auto k1 = bilinear_kernel_1d(factor);
  const int k = 2 * factor;
  Tensor w(Shape{channels, channels, k, k});
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx)
        w.at(c, c, ky, kx) = k1[static_cast<std::size_t>(ky)] * k1[static_cast<std::size_t>(kx)];
  return w;
}

Tensor deconv2d(const Tensor& x, const Tensor& w, int factor, Tape* tape) {
  if (factor < 1) throw Error("deconv2d: factor must be >= 1");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int k = 2 * factor;
  if (ws.n != xs.c) throw Error("deconv2d: channel mismatch, input " + xs.str() +
                                " weights " + ws.str());
  if (ws.h != k || ws.w != k) throw Error("deconv2d: kernel must be 2f x 2f");
  const int pad = (factor + 1) / 2;
  const std::int64_t out_c = ws.c;
  const std::int64_t oh = xs.h * factor, ow = xs.w * factor;
  Tensor out(Shape{xs.n, out_c, oh, ow});
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t oc = 0; oc < out_c; ++oc) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ky = 0; ky < k; ++ky) {
            const std::int64_t ty = oy + pad - ky;
            if (ty < 0 || ty % factor != 0) continue;
            const std::int64_t iy = ty / factor;
            if (iy >= xs.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const std::int64_t tx = ox + pad - kx;
              if (tx < 0 || tx % factor != 0) continue;
              const std::int64_t ix = tx / factor;
              if (ix >= xs.w) continue;
              for (std::int64_t ic = 0; ic < xs.c; ++ic)
                acc += x.at(n, ic, iy, ix) * w.at(ic, oc, ky, kx);
            }
          }
          out.at(n, oc, oy, ox) = acc;
        }
      }
    }
  }
  check_finite(out, "deconv2d");
  if (tracked(tape, {&x, &w})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, oc2 = out;
    const int f = factor;
    tape->record([xc, wc, oc2, f, pad, k]() mutable {
      const Shape& xs2 = xc.shape();
      const std::int64_t out_c2 = wc.shape().c;
      const Shape& os = oc2.shape();
      const bool gx = xc.requires_grad();
      const bool gw = wc.requires_grad();
      for (std::int64_t n = 0; n < xs2.n; ++n) {
        for (std::int64_t oc = 0; oc < out_c2; ++oc) {
          for (std::int64_t oy = 0; oy < os.h; ++oy) {
            for (std::int64_t ox = 0; ox < os.w; ++ox) {
              const double g = oc2.grad_data()[((n * os.c + oc) * os.h + oy) * os.w + ox];
              if (g == 0.0) continue;
              for (int ky = 0; ky < k; ++ky) {
                const std::int64_t ty = oy + pad - ky;
                if (ty < 0 || ty % f != 0) continue;
                const std::int64_t iy = ty / f;
                if (iy >= xs2.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const std::int64_t tx = ox + pad - kx;
                  if (tx < 0 || tx % f != 0) continue;
                  const std::int64_t ix = tx / f;
                  if (ix >= xs2.w) continue;
                  for (std::int64_t ic = 0; ic < xs2.c; ++ic) {
                    if (gx)
                      xc.grad()[((n * xs2.c + ic) * xs2.h + iy) * xs2.w + ix] +=
                          wc.at(ic, oc, ky, kx) * g;
                    if (gw)
                      wc.grad()[((ic * wc.shape().c + oc) * k + ky) * k + kx] +=
                          xc.at(n, ic, iy, ix) * g;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor l2norm_scale(const Tensor& x, const Tensor& gamma, double epsilon,
                    Tape* tape) {
  const Shape& xs = x.shape();
  if (gamma.size() != xs.c)
    throw Error("l2norm_scale: gamma length " + std::to_string(gamma.size()) +
                " does not match channels " + std::to_string(xs.c));
  Tensor out(xs);
  const std::int64_t hw = xs.h * xs.w;
  auto norms = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(xs.n * hw));
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t p = 0; p < hw; ++p) {
      double sq = 0.0;
      for (std::int64_t c = 0; c < xs.c; ++c) {
        const double v = x.data()[(n * xs.c + c) * hw + p];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      (*norms)[static_cast<std::size_t>(n * hw + p)] = norm;
      const double denom = std::max(norm, epsilon);
      for (std::int64_t c = 0; c < xs.c; ++c)
        out.data()[(n * xs.c + c) * hw + p] =
            gamma.data()[c] * x.data()[(n * xs.c + c) * hw + p] / denom;
    }
  }
  check_finite(out, "l2norm_scale");
  if (tracked(tape, {&x, &gamma})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, oc = out;
    tape->record([xc, gc, oc, norms, epsilon]() mutable {
      const Shape& s = xc.shape();
      const std::int64_t hw2 = s.h * s.w;
      const bool need_x = xc.requires_grad();
      const bool need_g = gc.requires_grad();
      for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t p = 0; p < hw2; ++p) {
          const double norm = (*norms)[static_cast<std::size_t>(n * hw2 + p)];
          if (norm > epsilon) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t i = (n * s.c + c) * hw2 + p;
              dot += gc.data()[c] * oc.grad_data()[i] * xc.data()[i];
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t i = (n * s.c + c) * hw2 + p;
              const double g = oc.grad_data()[i];
              if (need_x)
                xc.grad()[i] += (gc.data()[c] * g - xc.data()[i] * dot / (norm * norm)) / norm;
              if (need_g) gc.grad()[c] += g * xc.data()[i] / norm;
            }
          } else {
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t i = (n * s.c + c) * hw2 + p;
              const double g = oc.grad_data()[i];
              if (need_x) xc.grad()[i] += gc.data()[c] * g / epsilon;
              if (need_g) gc.grad()[c] += g * xc.data()[i] / epsilon;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor gather(const Tensor& x, const std::vector<std::int64_t>& idx,
              const Shape& out_shape, Tape* tape) {
  if (static_cast<std::int64_t>(idx.size()) != out_shape.count())
    throw Error("gather: index count does not match output shape");
  Tensor out(out_shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.size()) throw Error("gather: index out of range");
    out.data()[i] = x.data()[idx[i]];
  }
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    auto ids = std::make_shared<std::vector<std::int64_t>>(idx);
    tape->record([xc, oc, ids]() mutable {
      if (!xc.requires_grad()) return;
      for (std::size_t i = 0; i < ids->size(); ++i)
        xc.grad()[(*ids)[i]] += oc.grad_data()[i];
    });
  }
  return out;
}

Tensor spatial_mean(const Tensor& x, Tape* tape) {
  const Shape& s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      const double* p = x.data() + (n * s.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
      out.data()[n * s.c + c] = acc / static_cast<double>(hw);
    }
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const Shape& s2 = xc.shape();
      const std::int64_t hw2 = s2.h * s2.w;
      for (std::int64_t n = 0; n < s2.n; ++n)
        for (std::int64_t c = 0; c < s2.c; ++c) {
          const double g = oc.grad_data()[n * s2.c + c] / static_cast<double>(hw2);
          double* gp = xc.grad() + (n * s2.c + c) * hw2;
          for (std::int64_t i = 0; i < hw2; ++i) gp[i] += g;
        }
    });
  }
  return out;
}

std::vector<double> softmax_vec(const double* logits, int n) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  std::vector<double> p(static_cast<std::size_t>(n));
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
    z += p[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] /= z;
  return p;
}

Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                    Tape* tape) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1) throw Error("softmax_xent: logits must be (N,C,1,1)");
  if (static_cast<std::int64_t>(labels.size()) != s.n)
    throw Error("softmax_xent: label count does not match batch");
  const int C = static_cast<int>(s.c);
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(s.n * s.c));
  double loss = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    if (labels[static_cast<std::size_t>(n)] < 0 || labels[static_cast<std::size_t>(n)] >= C)
      throw Error("softmax_xent: label out of range [0," + std::to_string(C - 1) + "]");
    auto p = softmax_vec(logits.data() + n * C, C);
    std::copy(p.begin(), p.end(), probs->begin() + static_cast<std::ptrdiff_t>(n * C));
    loss -= std::log(std::max(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])],
                              1e-300));
  }
  loss /= static_cast<double>(s.n);
  Tensor out = Tensor::scalar(loss);
  check_finite(out, "softmax_xent");
  if (tracked(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor lc = logits, oc = out;
    auto labs = std::make_shared<std::vector<int>>(labels);
    tape->record([lc, oc, probs, labs]() mutable {
      if (!lc.requires_grad()) return;
      const Shape& s2 = lc.shape();
      const double g = oc.grad_data()[0] / static_cast<double>(s2.n);
      for (std::int64_t n = 0; n < s2.n; ++n)
        for (std::int64_t c = 0; c < s2.c; ++c) {
          const double onehot = (c == (*labs)[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
          lc.grad()[n * s2.c + c] +=
              g * ((*probs)[static_cast<std::size_t>(n * s2.c + c)] - onehot);
        }
    });
  }
  return out;
}

Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target,
                      const std::vector<double>& row_weights, double normalizer,
                      Tape* tape) {
  const Shape& s = pred.shape();
  if (!(s == target.shape()))
    throw Error("smooth_l1_loss: shape mismatch " + s.str() + " vs " + target.shape().str());
  if (static_cast<std::int64_t>(row_weights.size()) != s.n)
    throw Error("smooth_l1_loss: row weight count mismatch");
  if (normalizer <= 0.0) throw Error("smooth_l1_loss: normalizer must be positive");
  const std::int64_t D = s.c * s.h * s.w;
  double loss = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < D; ++i) {
      const double d = pred.data()[n * D + i] - target.data()[n * D + i];
      acc += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
    loss += row_weights[static_cast<std::size_t>(n)] * acc;
  }
  Tensor out = Tensor::scalar(loss / normalizer);
  check_finite(out, "smooth_l1_loss");
  if (tracked(tape, {&pred})) {
    out.set_requires_grad(true);
    Tensor pc = pred, tc = target, oc = out;
    auto rw = std::make_shared<std::vector<double>>(row_weights);
    tape->record([pc, tc, oc, rw, normalizer]() mutable {
      if (!pc.requires_grad()) return;
      const Shape& s2 = pc.shape();
      const std::int64_t D2 = s2.c * s2.h * s2.w;
      const double g = oc.grad_data()[0] / normalizer;
      for (std::int64_t n = 0; n < s2.n; ++n) {
        const double w = (*rw)[static_cast<std::size_t>(n)];
        if (w == 0.0) continue;
        for (std::int64_t i = 0; i < D2; ++i) {
          const double d = pc.data()[n * D2 + i] - tc.data()[n * D2 + i];
          const double dd = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
          pc.grad()[n * D2 + i] += g * w * dd;
        }
      }
    });
  }
  return out;
}

Tensor scaled_sum(const std::vector<Tensor>& scalars,
                  const std::vector<double>& weights, Tape* tape) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw Error("scaled_sum: bad argument sizes");
  double acc = 0.0;
  bool any_grad = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    acc += weights[i] * scalars[i].value();
    any_grad = any_grad || scalars[i].requires_grad();
  }
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "scaled_sum");
  if (tape && any_grad) {
    out.set_requires_grad(true);
    auto ins = std::make_shared<std::vector<Tensor>>(scalars);
    auto ws = std::make_shared<std::vector<double>>(weights);
    Tensor oc = out;
    tape->record([ins, ws, oc]() mutable {
      const double g = oc.grad_data()[0];
      for (std::size_t i = 0; i < ins->size(); ++i)
        if ((*ins)[i].requires_grad()) (*ins)[i].grad()[0] += g * (*ws)[i];
    });
  }
  return out;
}

namespace {

struct BinRect {
  std::int64_t ys, ye, xs, xe;
  std::int64_t npix() const {
    const std::int64_t h = ye - ys, w = xe - xs;
    return (h > 0 && w > 0) ? h * w : 0;
  }
};

BinRect psroi_bin(const Box& roi, int stride, int k, int i, int j,
                  std::int64_t map_h, std::int64_t map_w) {
  const double x0 = roi.x_min / stride, y0 = roi.y_min / stride;
  const double bw = (roi.x_max - roi.x_min) / stride / k;
  const double bh = (roi.y_max - roi.y_min) / stride / k;
  BinRect r;
  r.ys = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(y0 + i * bh)), 0, map_h);
  r.ye = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::ceil(y0 + (i + 1) * bh)), 0, map_h);
  r.xs = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(x0 + j * bw)), 0, map_w);
  r.xe = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::ceil(x0 + (j + 1) * bw)), 0, map_w);
  return r;
}

}  // namespace

Tensor psroi_pool(const std::vector<PsroiLevelMaps>& levels,
                  const std::vector<Box>& rois, int k, int channels,
                  Tape* tape) {
  if (levels.empty()) throw Error("psroi_pool: no levels");
  for (const auto& lvl : levels) {
    if (lvl.stride < 1) throw Error("psroi_pool: invalid level stride");
    if (lvl.maps.shape().c != static_cast<std::int64_t>(k) * k * channels)
      throw Error("psroi_pool: level has " + std::to_string(lvl.maps.shape().c) +
                  " channels, expected " + std::to_string(k * k * channels));
  }
  const std::int64_t R = static_cast<std::int64_t>(rois.size());
  for (const Box& r : rois)
    if (!r.valid()) throw Error("psroi_pool: RoI with non-positive area");
  Tensor out(Shape{R, channels, k, k});
  for (std::int64_t r = 0; r < R; ++r) {
    for (const auto& lvl : levels) {
      const Shape& ms = lvl.maps.shape();
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const BinRect br = psroi_bin(rois[static_cast<std::size_t>(r)], lvl.stride,
                                       k, i, j, ms.h, ms.w);
          const std::int64_t n = br.npix();
          if (n == 0) continue;  // empty bin contributes zero
          for (int c = 0; c < channels; ++c) {
            const std::int64_t ch = static_cast<std::int64_t>(i * k + j) * channels + c;
            double acc = 0.0;
            for (std::int64_t y = br.ys; y < br.ye; ++y) {
              const double* row = lvl.maps.data() + (ch * ms.h + y) * ms.w;
              for (std::int64_t x = br.xs; x < br.xe; ++x) acc += row[x];
            }
            out.at(r, c, i, j) += acc / static_cast<double>(n);
          }
        }
      }
    }
  }
  check_finite(out, "psroi_pool");
  bool any_grad = false;
  for (const auto& lvl : levels) any_grad = any_grad || lvl.maps.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    auto lvls = std::make_shared<std::vector<PsroiLevelMaps>>(levels);
    auto rs = std::make_shared<std::vector<Box>>(rois);
    Tensor oc = out;
    tape->record([lvls, rs, oc, k, channels]() mutable {
      const std::int64_t R2 = static_cast<std::int64_t>(rs->size());
      for (std::int64_t r = 0; r < R2; ++r) {
        for (auto& lvl : *lvls) {
          if (!lvl.maps.requires_grad()) continue;
          const Shape& ms = lvl.maps.shape();
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              const BinRect br = psroi_bin((*rs)[static_cast<std::size_t>(r)],
                                           lvl.stride, k, i, j, ms.h, ms.w);
              const std::int64_t n = br.npix();
              if (n == 0) continue;
              for (int c = 0; c < channels; ++c) {
                const std::int64_t ch =
                    static_cast<std::int64_t>(i * k + j) * channels + c;
                const double g =
                    oc.grad_data()[((r * channels + c) * k + i) * k + j] /
                    static_cast<double>(n);
                if (g == 0.0) continue;
                for (std::int64_t y = br.ys; y < br.ye; ++y) {
                  double* row = lvl.maps.grad() + (ch * ms.h + y) * ms.w;
                  for (std::int64_t x = br.xs; x < br.xe; ++x) row[x] += g;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace msp
