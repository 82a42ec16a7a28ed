#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ttalab/tensor.hpp"

namespace ttalab {
namespace ops {

template <typename S>
inline bool track(Tape<S>* tape, std::initializer_list<const TensorT<S>*> ins) {
  if (!tape) return false;
  for (const TensorT<S>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// ---- elementwise -----------------------------------------------------------

template <typename S>
TensorT<S> add(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  TensorT<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  if (track(tape, {&a, &b})) {
    out.enable_grad();
    TensorT<S> ac = a, bc = b, oc = out;
    tape->push([ac, bc, oc]() mutable {
      const S* g = oc.grad();
      if (ac.requires_grad()) {
        S* ga = ac.grad();
        for (std::size_t i = 0; i < oc.numel(); ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        S* gb = bc.grad();
        for (std::size_t i = 0; i < oc.numel(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> mul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  TensorT<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  if (track(tape, {&a, &b})) {
    out.enable_grad();
    TensorT<S> ac = a, bc = b, oc = out;
    tape->push([ac, bc, oc]() mutable {
      const S* g = oc.grad();
      if (ac.requires_grad()) {
        S* ga = ac.grad();
        const S* pb2 = bc.data();
        for (std::size_t i = 0; i < oc.numel(); ++i) ga[i] += g[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        S* gb = bc.grad();
        const S* pa2 = ac.data();
        for (std::size_t i = 0; i < oc.numel(); ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> scale(Tape<S>* tape, const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
  if (track(tape, {&a})) {
    out.enable_grad();
    TensorT<S> ac = a, oc = out;
    tape->push([ac, oc, c]() mutable {
      const S* g = oc.grad();
      S* ga = ac.grad();
      for (std::size_t i = 0; i < oc.numel(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename S>
TensorT<S> sum(Tape<S>* tape, const TensorT<S>& a) {
  TensorT<S> out(Shape{});
  double acc = 0.0;
  const S* pa = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(pa[i]);
  out.data()[0] = static_cast<S>(acc);
  if (track(tape, {&a})) {
    out.enable_grad();
    TensorT<S> ac = a, oc = out;
    tape->push([ac, oc]() mutable {
      S g = oc.grad()[0];
      S* ga = ac.grad();
      for (std::size_t i = 0; i < ac.numel(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename S>
TensorT<S> mean(Tape<S>* tape, const TensorT<S>& a) {
  check(a.numel() > 0, "mean: empty tensor");
  S inv = static_cast<S>(1.0 / static_cast<double>(a.numel()));
  return scale(tape, sum(tape, a), inv);
}

// ---- affine ----------------------------------------------------------------

// x:{N,D} w:{D,K} b:{K} -> {N,K}
template <typename S>
TensorT<S> linear(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b) {
  check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear: bad ranks");
  const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
  check(w.dim(0) == D && b.dim(0) == K, "linear: shape mismatch");
  TensorT<S> out(Shape{N, K});
  const S* px = x.data();
  const S* pw = w.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int n = 0; n < N; ++n) {
    S* orow = po + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) orow[k] = pb[k];
    const S* xrow = px + static_cast<std::size_t>(n) * D;
    for (int d = 0; d < D; ++d) {
      S xv = xrow[d];
      const S* wrow = pw + static_cast<std::size_t>(d) * K;
      for (int k = 0; k < K; ++k) orow[k] += xv * wrow[k];
    }
  }
  if (track(tape, {&x, &w, &b})) {
    out.enable_grad();
    TensorT<S> xc = x, wc = w, bc = b, oc = out;
    tape->push([xc, wc, bc, oc, N, D, K]() mutable {
      const S* g = oc.grad();
      if (bc.requires_grad()) {
        S* gb = bc.grad();
        for (int n = 0; n < N; ++n)
          for (int k = 0; k < K; ++k) gb[k] += g[static_cast<std::size_t>(n) * K + k];
      }
      if (wc.requires_grad()) {
        S* gw = wc.grad();
        const S* px2 = xc.data();
        for (int n = 0; n < N; ++n) {
          const S* xrow = px2 + static_cast<std::size_t>(n) * D;
          const S* grow = g + static_cast<std::size_t>(n) * K;
          for (int d = 0; d < D; ++d) {
            S xv = xrow[d];
            S* gwrow = gw + static_cast<std::size_t>(d) * K;
            for (int k = 0; k < K; ++k) gwrow[k] += xv * grow[k];
          }
        }
      }
      if (xc.requires_grad()) {
        S* gx = xc.grad();
        const S* pw2 = wc.data();
        for (int n = 0; n < N; ++n) {
          S* gxrow = gx + static_cast<std::size_t>(n) * D;
          const S* grow = g + static_cast<std::size_t>(n) * K;
          for (int d = 0; d < D; ++d) {
            const S* wrow = pw2 + static_cast<std::size_t>(d) * K;
            S acc = S(0);
            for (int k = 0; k < K; ++k) acc += wrow[k] * grow[k];
            gxrow[d] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---- convolution -----------------------------------------------------------

inline int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }

// Direct 3x3 convolution, zero padding 1, stride in {1,2}.
// x:{N,C,H,W} w:{Co,Ci,3,3} b:{Co} -> {N,Co,Ho,Wo}
template <typename S>
TensorT<S> conv2d(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b, int stride) {
  check(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  check(x.rank() == 4 && w.rank() == 4 && b.rank() == 1, "conv2d: bad ranks");
  check(w.dim(2) == 3 && w.dim(3) == 3, "conv2d: kernel must be 3x3");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0);
  check(w.dim(1) == C, "conv2d: channel mismatch");
  check(b.dim(0) == Co, "conv2d: bias mismatch");
  const int Ho = conv_out_dim(H, stride), Wo = conv_out_dim(W, stride);
  TensorT<S> out(Shape{N, Co, Ho, Wo});
  const S* px = x.data();
  const S* pw = w.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::size_t xn = static_cast<std::size_t>(C) * H * W;
  const std::size_t on = static_cast<std::size_t>(Co) * Ho * Wo;
  for (int n = 0; n < N; ++n) {
    const S* xb = px + n * xn;
    S* ob = po + n * on;
    for (int co = 0; co < Co; ++co) {
      S* oc = ob + static_cast<std::size_t>(co) * Ho * Wo;
      S bias = pb[co];
      for (int i = 0; i < Ho * Wo; ++i) oc[i] = bias;
      for (int ci = 0; ci < C; ++ci) {
        const S* xcp = xb + static_cast<std::size_t>(ci) * H * W;
        const S* wk = pw + (static_cast<std::size_t>(co) * C + ci) * 9;
        for (int kh = 0; kh < 3; ++kh) {
          for (int kw = 0; kw < 3; ++kw) {
            S wv = wk[kh * 3 + kw];
            if (wv == S(0)) continue;
            // input coords: ih = ho*stride + kh - 1, iw = wo*stride + kw - 1
            int ho_lo = std::max(0, (1 - kh + stride - 1) / stride);
            while (ho_lo * stride + kh - 1 < 0) ++ho_lo;
            int ho_hi = Ho - 1;
            while (ho_hi >= 0 && ho_hi * stride + kh - 1 >= H) --ho_hi;
            int wo_lo = 0;
            while (wo_lo * stride + kw - 1 < 0) ++wo_lo;
            int wo_hi = Wo - 1;
            while (wo_hi >= 0 && wo_hi * stride + kw - 1 >= W) --wo_hi;
            for (int ho = ho_lo; ho <= ho_hi; ++ho) {
              const S* xrow = xcp + static_cast<std::size_t>(ho * stride + kh - 1) * W;
              S* orow = oc + static_cast<std::size_t>(ho) * Wo;
              const S* xcol = xrow + (kw - 1);
              if (stride == 1) {
                for (int wo = wo_lo; wo <= wo_hi; ++wo) orow[wo] += wv * xcol[wo];
              } else {
                for (int wo = wo_lo; wo <= wo_hi; ++wo) orow[wo] += wv * xcol[2 * wo];
              }
            }
          }
        }
      }
    }
  }
  if (track(tape, {&x, &w, &b})) {
    out.enable_grad();
    TensorT<S> xc = x, wc = w, bc = b, oc = out;
    int st = stride;
    tape->push([xc, wc, bc, oc, st, N, C, H, W, Co, Ho, Wo]() mutable {
      const S* g = oc.grad();
      const S* px2 = xc.data();
      const S* pw2 = wc.data();
      const bool need_x = xc.requires_grad();
      const bool need_w = wc.requires_grad();
      S* gx = need_x ? xc.grad() : nullptr;
      S* gw = need_w ? wc.grad() : nullptr;
      if (bc.requires_grad()) {
        S* gb = bc.grad();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co) {
            const S* grow = g + ((static_cast<std::size_t>(n) * Co + co) * Ho) * Wo;
            S acc = S(0);
            for (int i = 0; i < Ho * Wo; ++i) acc += grow[i];
            gb[co] += acc;
          }
      }
      if (!need_x && !need_w) return;
      const std::size_t xn = static_cast<std::size_t>(C) * H * W;
      const std::size_t on = static_cast<std::size_t>(Co) * Ho * Wo;
      for (int n = 0; n < N; ++n) {
        const S* xb = px2 + n * xn;
        S* gxb = need_x ? gx + n * xn : nullptr;
        const S* gb2 = g + n * on;
        for (int co = 0; co < Co; ++co) {
          const S* goc = gb2 + static_cast<std::size_t>(co) * Ho * Wo;
          for (int ci = 0; ci < C; ++ci) {
            const S* xcp = xb + static_cast<std::size_t>(ci) * H * W;
            S* gxcp = need_x ? gxb + static_cast<std::size_t>(ci) * H * W : nullptr;
            const S* wk = pw2 + (static_cast<std::size_t>(co) * C + ci) * 9;
            S* gwk = need_w ? gw + (static_cast<std::size_t>(co) * C + ci) * 9 : nullptr;
            for (int kh = 0; kh < 3; ++kh) {
              for (int kw = 0; kw < 3; ++kw) {
                int ho_lo = 0;
                while (ho_lo * st + kh - 1 < 0) ++ho_lo;
                int ho_hi = Ho - 1;
                while (ho_hi >= 0 && ho_hi * st + kh - 1 >= H) --ho_hi;
                int wo_lo = 0;
                while (wo_lo * st + kw - 1 < 0) ++wo_lo;
                int wo_hi = Wo - 1;
                while (wo_hi >= 0 && wo_hi * st + kw - 1 >= W) --wo_hi;
                S wv = wk[kh * 3 + kw];
                S wacc = S(0);
                for (int ho = ho_lo; ho <= ho_hi; ++ho) {
                  const int ih = ho * st + kh - 1;
                  const S* xrow = xcp + static_cast<std::size_t>(ih) * W + (kw - 1);
                  const S* grow = goc + static_cast<std::size_t>(ho) * Wo;
                  S* gxrow = need_x ? gxcp + static_cast<std::size_t>(ih) * W + (kw - 1) : nullptr;
                  if (st == 1) {
                    for (int wo = wo_lo; wo <= wo_hi; ++wo) {
                      S gv = grow[wo];
                      wacc += gv * xrow[wo];
                      if (need_x) gxrow[wo] += wv * gv;
                    }
                  } else {
                    for (int wo = wo_lo; wo <= wo_hi; ++wo) {
                      S gv = grow[wo];
                      wacc += gv * xrow[2 * wo];
                      if (need_x) gxrow[2 * wo] += wv * gv;
                    }
                  }
                }
                if (need_w) gwk[kh * 3 + kw] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- activations / pooling -------------------------------------------------

template <typename S>
TensorT<S> relu(Tape<S>* tape, const TensorT<S>& x) {
  TensorT<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
  if (track(tape, {&x})) {
    out.enable_grad();
    TensorT<S> xc = x, oc = out;
    tape->push([xc, oc]() mutable {
      const S* g = oc.grad();
      const S* px2 = xc.data();
      S* gx = xc.grad();
      for (std::size_t i = 0; i < xc.numel(); ++i)
        if (px2[i] > S(0)) gx[i] += g[i];
    });
  }
  return out;
}

// 2x2 max pooling, stride 2. Requires even spatial dims.
template <typename S>
TensorT<S> maxpool2x2(Tape<S>* tape, const TensorT<S>& x) {
  check(x.rank() == 4, "maxpool2x2: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(H % 2 == 0 && W % 2 == 0, "maxpool2x2: spatial dims must be even");
  const int Ho = H / 2, Wo = W / 2;
  TensorT<S> out(Shape{N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(out.numel());
  const S* px = x.data();
  S* po = out.data();
  std::size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo, ++oi) {
          int base = (2 * ho) * W + 2 * wo;
          int best = base;
          S bv = plane[base];
          const int cand[3] = {base + 1, base + W, base + W + 1};
          for (int k = 0; k < 3; ++k)
            if (plane[cand[k]] > bv) {
              bv = plane[cand[k]];
              best = cand[k];
            }
          po[oi] = bv;
          (*argmax)[oi] = static_cast<int>((static_cast<std::size_t>(n) * C + c) * H * W) + best;
        }
    }
  if (track(tape, {&x})) {
    out.enable_grad();
    TensorT<S> xc = x, oc = out;
    tape->push([xc, oc, argmax]() mutable {
      const S* g = oc.grad();
      S* gx = xc.grad();
      for (std::size_t i = 0; i < oc.numel(); ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

// Global average pool {N,C,H,W} -> {N,C}. Spatial-size agnostic, which is what
// lets the models consume resize/pad preprocessed inputs of varying size.
template <typename S>
TensorT<S> global_avg_pool(Tape<S>* tape, const TensorT<S>& x) {
  check(x.rank() == 4, "global_avg_pool: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(H > 0 && W > 0, "global_avg_pool: empty spatial dims");
  TensorT<S> out(Shape{N, C});
  const S* px = x.data();
  S* po = out.data();
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += plane[i];
      po[static_cast<std::size_t>(n) * C + c] = static_cast<S>(acc * inv);
    }
  if (track(tape, {&x})) {
    out.enable_grad();
    TensorT<S> xc = x, oc = out;
    tape->push([xc, oc, N, C, H, W]() mutable {
      const S* g = oc.grad();
      S* gx = xc.grad();
      const S inv = static_cast<S>(1.0 / (static_cast<double>(H) * W));
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S gv = g[static_cast<std::size_t>(n) * C + c] * inv;
          S* plane = gx + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int i = 0; i < H * W; ++i) plane[i] += gv;
        }
    });
  }
  return out;
}

// ---- softmax and losses ----------------------------------------------------

// Row-wise softmax on {N,K}. Numerically shifted by the row max.
template <typename S>
TensorT<S> softmax(Tape<S>* tape, const TensorT<S>& z) {
  check(z.rank() == 2, "softmax: expected {N,K}");
  const int N = z.dim(0), K = z.dim(1);
  TensorT<S> out(z.shape());
  const S* pz = z.data();
  S* po = out.data();
  for (int n = 0; n < N; ++n) {
    const S* row = pz + static_cast<std::size_t>(n) * K;
    S* orow = po + static_cast<std::size_t>(n) * K;
    S mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(static_cast<double>(row[k] - mx));
      orow[k] = static_cast<S>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int k = 0; k < K; ++k) orow[k] = static_cast<S>(orow[k] * inv);
  }
  if (track(tape, {&z})) {
    out.enable_grad();
    TensorT<S> zc = z, oc = out;
    tape->push([zc, oc, N, K]() mutable {
      const S* g = oc.grad();
      const S* p = oc.data();
      S* gz = zc.grad();
      for (int n = 0; n < N; ++n) {
        const S* grow = g + static_cast<std::size_t>(n) * K;
        const S* prow = p + static_cast<std::size_t>(n) * K;
        S* gzrow = gz + static_cast<std::size_t>(n) * K;
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += static_cast<double>(grow[k]) * prow[k];
        for (int k = 0; k < K; ++k)
          gzrow[k] += prow[k] * (grow[k] - static_cast<S>(dot));
      }
    });
  }
  return out;
}

// Mean softmax cross-entropy against integer labels.
template <typename S>
TensorT<S> ce_loss(Tape<S>* tape, const TensorT<S>& logits,
                   const std::vector<int>& labels) {
  check(logits.rank() == 2, "ce_loss: expected {N,K}");
  const int N = logits.dim(0), K = logits.dim(1);
  check(static_cast<int>(labels.size()) == N, "ce_loss: label count mismatch");
  for (int y : labels) check(y >= 0 && y < K, "ce_loss: label out of range");
  auto probs = std::make_shared<std::vector<S>>(logits.numel());
  const S* pz = logits.data();
  double acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const S* row = pz + static_cast<std::size_t>(n) * K;
    S* prow = probs->data() + static_cast<std::size_t>(n) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(static_cast<double>(row[k]) - mx);
      prow[k] = static_cast<S>(e);
      denom += e;
    }
    double lse = mx + std::log(denom);
    acc += lse - static_cast<double>(row[labels[static_cast<std::size_t>(n)]]);
    const double inv = 1.0 / denom;
    for (int k = 0; k < K; ++k) prow[k] = static_cast<S>(prow[k] * inv);
  }
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / N));
  if (track(tape, {&logits})) {
    out.enable_grad();
    TensorT<S> zc = logits, oc = out;
    auto lbl = std::make_shared<std::vector<int>>(labels);
    tape->push([zc, oc, probs, lbl, N, K]() mutable {
      const S g = oc.grad()[0];
      S* gz = zc.grad();
      const S invn = static_cast<S>(1.0 / N);
      for (int n = 0; n < N; ++n) {
        const S* prow = probs->data() + static_cast<std::size_t>(n) * K;
        S* gzrow = gz + static_cast<std::size_t>(n) * K;
        const int y = (*lbl)[static_cast<std::size_t>(n)];
        for (int k = 0; k < K; ++k) {
          S delta = (k == y) ? S(1) : S(0);
          gzrow[k] += g * invn * (prow[k] - delta);
        }
      }
    });
  }
  return out;
}

// Mean Shannon entropy of the softmax predictions. 0*log(0) is taken as 0, so
// an exactly one-hot prediction contributes zero loss and zero gradient.
template <typename S>
TensorT<S> entropy_loss(Tape<S>* tape, const TensorT<S>& logits) {
  check(logits.rank() == 2, "entropy_loss: expected {N,K}");
  const int N = logits.dim(0), K = logits.dim(1);
  auto probs = std::make_shared<std::vector<S>>(logits.numel());
  auto rowh = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N));
  const S* pz = logits.data();
  double acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const S* row = pz + static_cast<std::size_t>(n) * K;
    S* prow = probs->data() + static_cast<std::size_t>(n) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(static_cast<double>(row[k]) - mx);
      prow[k] = static_cast<S>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    double h = 0.0;
    for (int k = 0; k < K; ++k) {
      double p = static_cast<double>(prow[k]) * inv;
      prow[k] = static_cast<S>(p);
      if (p > 0.0) h -= p * std::log(p);
    }
    (*rowh)[static_cast<std::size_t>(n)] = h;
    acc += h;
  }
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / N));
  if (track(tape, {&logits})) {
    out.enable_grad();
    TensorT<S> zc = logits, oc = out;
    tape->push([zc, oc, probs, rowh, N, K]() mutable {
      const S g = oc.grad()[0];
      S* gz = zc.grad();
      const double invn = 1.0 / N;
      for (int n = 0; n < N; ++n) {
        const S* prow = probs->data() + static_cast<std::size_t>(n) * K;
        S* gzrow = gz + static_cast<std::size_t>(n) * K;
        const double h = (*rowh)[static_cast<std::size_t>(n)];
        for (int k = 0; k < K; ++k) {
          double p = static_cast<double>(prow[k]);
          if (p <= 0.0) continue;
          // dH/dz_k = -p_k (log p_k + H)
          gzrow[k] += g * static_cast<S>(-p * (std::log(p) + h) * invn);
        }
      }
    });
  }
  return out;
}

// Generalized cross-entropy on the argmax pseudo-label:
// mean over the batch of (1 - p(psi)^q) / q, psi = argmax_k p_k, q in (0,1].
// q -> 0 recovers cross-entropy of the argmax; q = 1 is 1 - mean p(psi).
template <typename S>
TensorT<S> gce_loss(Tape<S>* tape, const TensorT<S>& logits, double q) {
  check(logits.rank() == 2, "gce_loss: expected {N,K}");
  check(q > 0.0 && q <= 1.0, "gce_loss: q must be in (0,1]");
  const int N = logits.dim(0), K = logits.dim(1);
  auto probs = std::make_shared<std::vector<S>>(logits.numel());
  auto psi = std::make_shared<std::vector<int>>(static_cast<std::size_t>(N));
  const S* pz = logits.data();
  double acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const S* row = pz + static_cast<std::size_t>(n) * K;
    S* prow = probs->data() + static_cast<std::size_t>(n) * K;
    double mx = row[0];
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (static_cast<double>(row[k]) > mx) {
        mx = static_cast<double>(row[k]);
        arg = k;
      }
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(static_cast<double>(row[k]) - mx);
      prow[k] = static_cast<S>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int k = 0; k < K; ++k) prow[k] = static_cast<S>(prow[k] * inv);
    (*psi)[static_cast<std::size_t>(n)] = arg;
    double pq = std::pow(static_cast<double>(prow[arg]), q);
    acc += (1.0 - pq) / q;
  }
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / N));
  if (track(tape, {&logits})) {
    out.enable_grad();
    TensorT<S> zc = logits, oc = out;
    tape->push([zc, oc, probs, psi, q, N, K]() mutable {
      const S g = oc.grad()[0];
      S* gz = zc.grad();
      const double invn = 1.0 / N;
      for (int n = 0; n < N; ++n) {
        const S* prow = probs->data() + static_cast<std::size_t>(n) * K;
        S* gzrow = gz + static_cast<std::size_t>(n) * K;
        const int a = (*psi)[static_cast<std::size_t>(n)];
        const double pq = std::pow(static_cast<double>(prow[a]), q);
        for (int k = 0; k < K; ++k) {
          double delta = (k == a) ? 1.0 : 0.0;
          // dL/dz_k = -p(psi)^q (delta - p_k) / N, psi held fixed
          gzrow[k] += g * static_cast<S>(-pq * (delta - static_cast<double>(prow[k])) * invn);
        }
      }
    });
  }
  return out;
}

// ---- differentiable geometry (used inside attack gradient paths) -----------

// Nearest-neighbor resize of {N,C,H,W} to {N,C,H2,W2}. Backward scatters each
// output gradient onto its unique source pixel.
template <typename S>
TensorT<S> resize_nearest(Tape<S>* tape, const TensorT<S>& x, int H2, int W2) {
  check(x.rank() == 4, "resize_nearest: expected NCHW");
  check(H2 > 0 && W2 > 0, "resize_nearest: bad target size");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  TensorT<S> out(Shape{N, C, H2, W2});
  auto src_h = std::make_shared<std::vector<int>>(static_cast<std::size_t>(H2));
  auto src_w = std::make_shared<std::vector<int>>(static_cast<std::size_t>(W2));
  for (int i = 0; i < H2; ++i)
    (*src_h)[static_cast<std::size_t>(i)] =
        std::min(H - 1, static_cast<int>((static_cast<long long>(i) * H) / H2));
  for (int j = 0; j < W2; ++j)
    (*src_w)[static_cast<std::size_t>(j)] =
        std::min(W - 1, static_cast<int>((static_cast<long long>(j) * W) / W2));
  const S* px = x.data();
  S* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
      S* oplane = po + (static_cast<std::size_t>(n) * C + c) * H2 * W2;
      for (int i = 0; i < H2; ++i) {
        const S* row = plane + static_cast<std::size_t>((*src_h)[static_cast<std::size_t>(i)]) * W;
        S* orow = oplane + static_cast<std::size_t>(i) * W2;
        for (int j = 0; j < W2; ++j) orow[j] = row[(*src_w)[static_cast<std::size_t>(j)]];
      }
    }
  if (track(tape, {&x})) {
    out.enable_grad();
    TensorT<S> xc = x, oc = out;
    tape->push([xc, oc, src_h, src_w, N, C, H, W, H2, W2]() mutable {
      const S* g = oc.grad();
      S* gx = xc.grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S* gplane = gx + (static_cast<std::size_t>(n) * C + c) * H * W;
          const S* gorow0 = g + (static_cast<std::size_t>(n) * C + c) * H2 * W2;
          for (int i = 0; i < H2; ++i) {
            S* grow = gplane + static_cast<std::size_t>((*src_h)[static_cast<std::size_t>(i)]) * W;
            const S* gorow = gorow0 + static_cast<std::size_t>(i) * W2;
            for (int j = 0; j < W2; ++j) grow[(*src_w)[static_cast<std::size_t>(j)]] += gorow[j];
          }
        }
    });
  }
  return out;
}

// Places x on a zero canvas of size {CH,CW} with its top-left corner at
// (off_h, off_w). Backward slices the gradient back out.
template <typename S>
TensorT<S> place_on_canvas(Tape<S>* tape, const TensorT<S>& x, int CH, int CW,
                           int off_h, int off_w) {
  check(x.rank() == 4, "place_on_canvas: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(off_h >= 0 && off_w >= 0 && off_h + H <= CH && off_w + W <= CW,
        "place_on_canvas: content does not fit canvas");
  TensorT<S> out(Shape{N, C, CH, CW});
  const S* px = x.data();
  S* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
      S* oplane = po + (static_cast<std::size_t>(n) * C + c) * CH * CW;
      for (int i = 0; i < H; ++i) {
        S* orow = oplane + static_cast<std::size_t>(off_h + i) * CW + off_w;
        const S* row = plane + static_cast<std::size_t>(i) * W;
        for (int j = 0; j < W; ++j) orow[j] = row[j];
      }
    }
  if (track(tape, {&x})) {
    out.enable_grad();
    TensorT<S> xc = x, oc = out;
    tape->push([xc, oc, N, C, H, W, CH, CW, off_h, off_w]() mutable {
      const S* g = oc.grad();
      S* gx = xc.grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S* gplane = gx + (static_cast<std::size_t>(n) * C + c) * H * W;
          const S* goplane = g + (static_cast<std::size_t>(n) * C + c) * CH * CW;
          for (int i = 0; i < H; ++i) {
            const S* gorow = goplane + static_cast<std::size_t>(off_h + i) * CW + off_w;
            S* grow = gplane + static_cast<std::size_t>(i) * W;
            for (int j = 0; j < W; ++j) grow[j] += gorow[j];
          }
        }
    });
  }
  return out;
}

// ---- non-differentiable data ops -------------------------------------------

template <typename S>
TensorT<S> clamp(const TensorT<S>& x, S lo, S hi) {
  TensorT<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    po[i] = std::min(hi, std::max(lo, px[i]));
  return out;
}

template <typename S>
TensorT<S> clamp01(const TensorT<S>& x) {
  return clamp(x, S(0), S(1));
}

// Rotates each image of an NCHW batch by k*90 degrees counterclockwise.
// Exact pixel permutation; requires square spatial dims.
template <typename S>
TensorT<S> rot90(const TensorT<S>& x, int k) {
  check(x.rank() == 4, "rot90: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(H == W, "rot90: only square images are supported");
  k = ((k % 4) + 4) % 4;
  TensorT<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  const int M = H;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = px + (static_cast<std::size_t>(n) * C + c) * M * M;
      S* oplane = po + (static_cast<std::size_t>(n) * C + c) * M * M;
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) {
          int si, sj;
          switch (k) {
            case 0: si = i; sj = j; break;
            case 1: si = j; sj = M - 1 - i; break;  // 90 deg CCW
            case 2: si = M - 1 - i; sj = M - 1 - j; break;
            default: si = M - 1 - j; sj = i; break;  // 270 deg CCW
          }
          oplane[static_cast<std::size_t>(i) * M + j] = plane[static_cast<std::size_t>(si) * M + sj];
        }
    }
  return out;
}

template <typename S>
TensorT<S> hflip(const TensorT<S>& x) {
  check(x.rank() == 4, "hflip: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  TensorT<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i) {
        const S* row = px + ((static_cast<std::size_t>(n) * C + c) * H + i) * W;
        S* orow = po + ((static_cast<std::size_t>(n) * C + c) * H + i) * W;
        for (int j = 0; j < W; ++j) orow[j] = row[W - 1 - j];
      }
  return out;
}

// Extracts image n of an NCHW batch as a {1,C,H,W} tensor (deep copy).
template <typename S>
TensorT<S> slice_image(const TensorT<S>& x, int n) {
  check(x.rank() == 4, "slice_image: expected NCHW");
  check(n >= 0 && n < x.dim(0), "slice_image: index out of range");
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t sz = static_cast<std::size_t>(C) * H * W;
  TensorT<S> out(Shape{1, C, H, W});
  std::copy(x.data() + n * sz, x.data() + (n + 1) * sz, out.data());
  return out;
}

// Concatenates {1,C,H,W} images along N. All must share C,H,W.
template <typename S>
TensorT<S> stack_images(const std::vector<TensorT<S>>& imgs) {
  check(!imgs.empty(), "stack_images: empty list");
  const int C = imgs[0].dim(1), H = imgs[0].dim(2), W = imgs[0].dim(3);
  int N = 0;
  for (const auto& t : imgs) {
    check(t.rank() == 4 && t.dim(1) == C && t.dim(2) == H && t.dim(3) == W,
          "stack_images: inconsistent shapes");
    N += t.dim(0);
  }
  TensorT<S> out(Shape{N, C, H, W});
  S* po = out.data();
  for (const auto& t : imgs) {
    std::copy(t.data(), t.data() + t.numel(), po);
    po += t.numel();
  }
  return out;
}

template <typename S>
std::vector<int> argmax_rows(const TensorT<S>& z) {
  check(z.rank() == 2, "argmax_rows: expected {N,K}");
  const int N = z.dim(0), K = z.dim(1);
  std::vector<int> out(static_cast<std::size_t>(N));
  const S* pz = z.data();
  for (int n = 0; n < N; ++n) {
    const S* row = pz + static_cast<std::size_t>(n) * K;
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[arg]) arg = k;
    out[static_cast<std::size_t>(n)] = arg;
  }
  return out;
}

}  // namespace ops
}  // namespace ttalab
