#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ttalab/ops.hpp"
#include "ttalab/rng.hpp"
#include "ttalab/tensor.hpp"

namespace ttalab {

// Normalization forward behaviour:
//   kTrain      - normalize with current-batch stats, EMA-update running stats
//   kEval       - normalize with stored running stats, no update
//   kBatchStats - normalize with current-batch stats, running stats untouched
enum class NormMode { kTrain, kEval, kBatchStats };

template <typename S>
struct NamedParam {
  std::string name;
  TensorT<S>* tensor;
};

template <typename S>
struct Conv2dT {
  TensorT<S> w;  // {Co,Ci,3,3}
  TensorT<S> b;  // {Co}
  int stride = 1;

  void init(int ci, int co, int stride_, Rng& rng) {
    stride = stride_;
    w = TensorT<S>(Shape{co, ci, 3, 3}, S(0), true);
    b = TensorT<S>(Shape{co}, S(0), true);
    const double std = std::sqrt(2.0 / (static_cast<double>(ci) * 9.0));
    for (auto& v : w.vec()) v = static_cast<S>(rng.normal(0.0, std));
  }

  TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const {
    return ops::conv2d(tape, x, w, b, stride);
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

template <typename S>
struct LinearT {
  TensorT<S> w;  // {D,K}
  TensorT<S> b;  // {K}

  void init(int d, int k, Rng& rng) {
    w = TensorT<S>(Shape{d, k}, S(0), true);
    b = TensorT<S>(Shape{k}, S(0), true);
    const double std = std::sqrt(2.0 / static_cast<double>(d));
    for (auto& v : w.vec()) v = static_cast<S>(rng.normal(0.0, std));
  }

  TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const {
    return ops::linear(tape, x, w, b);
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

enum class NormKind { kBatchNorm, kGroupNorm };

// Channel normalization layer. Batch norm keeps per-channel running stats in
// double: the adaptation-statistics trajectory must track a scalar recurrence
// oracle to 1e-6 over hundreds of steps, which single precision cannot hold.
template <typename S>
struct NormLayerT {
  NormKind kind = NormKind::kBatchNorm;
  TensorT<S> gamma, beta;            // {C}
  std::vector<double> running_mu;    // BN only
  std::vector<double> running_var;   // BN only
  double eps = 1e-5;
  double momentum = 0.1;  // EMA momentum applied in kTrain
  double rho = 0.1;       // streaming-adaptation momentum state
  double xi = 0.005;      // streaming-adaptation momentum floor
  int groups = 1;         // GN only
  // Most recent batch statistics (batch-stat modes only); read by tests and
  // by the statistics-trajectory oracle.
  std::vector<double> last_batch_mu, last_batch_var;

  void init(NormKind kind_, int c, int groups_ = 1) {
    kind = kind_;
    gamma = TensorT<S>(Shape{c}, S(1), true);
    beta = TensorT<S>(Shape{c}, S(0), true);
    if (kind == NormKind::kBatchNorm) {
      running_mu.assign(static_cast<std::size_t>(c), 0.0);
      running_var.assign(static_cast<std::size_t>(c), 1.0);
    } else {
      check(groups_ >= 1 && c % groups_ == 0,
            "group norm: channels must divide evenly into groups");
      groups = groups_;
    }
  }

  int channels() const { return gamma.dim(0); }

  TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x, NormMode mode) {
    check(x.rank() == 4, "norm layer: expected NCHW");
    check(x.dim(1) == channels(), "norm layer: channel mismatch");
    if (kind == NormKind::kGroupNorm) return forward_gn(tape, x);
    if (mode == NormMode::kEval) return forward_bn_eval(tape, x);
    return forward_bn_batch(tape, x, mode == NormMode::kTrain);
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }

 private:
  TensorT<S> forward_bn_batch(Tape<S>* tape, const TensorT<S>& x, bool update) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (N < 2)
      throw DegenerateBatchError(
          "batch statistics requested with batch size " + std::to_string(N));
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const double m = static_cast<double>(N) * plane;
    last_batch_mu.assign(static_cast<std::size_t>(C), 0.0);
    last_batch_var.assign(static_cast<std::size_t>(C), 0.0);
    const S* px = x.data();
    for (int c = 0; c < C; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const S* p = px + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = static_cast<double>(p[i]);
          s1 += v;
          s2 += v * v;
        }
      }
      const double mu = s1 / m;
      double var = s2 / m - mu * mu;  // biased
      if (var < 0.0) var = 0.0;
      last_batch_mu[static_cast<std::size_t>(c)] = mu;
      last_batch_var[static_cast<std::size_t>(c)] = var;
    }
    if (update) {
      // running <- (1 - momentum) * running + momentum * batch, written in
      // delta form so a batch matching the running stats is an exact fixed point
      for (int c = 0; c < C; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        running_mu[ci] += momentum * (last_batch_mu[ci] - running_mu[ci]);
        running_var[ci] += momentum * (last_batch_var[ci] - running_var[ci]);
      }
    }
    return normalize_with(tape, x, last_batch_mu, last_batch_var, /*batch_grad=*/true);
  }

  TensorT<S> forward_bn_eval(Tape<S>* tape, const TensorT<S>& x) {
    return normalize_with(tape, x, running_mu, running_var, /*batch_grad=*/false);
  }

  // Shared BN normalization. batch_grad selects the full batch-statistics
  // backward (stats depend on x) versus the frozen-stats affine backward.
  TensorT<S> normalize_with(Tape<S>* tape, const TensorT<S>& x,
                            const std::vector<double>& mu,
                            const std::vector<double>& var, bool batch_grad) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    TensorT<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto invstd = std::make_shared<std::vector<S>>(static_cast<std::size_t>(C));
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pbt = beta.data();
    S* po = out.data();
    for (int c = 0; c < C; ++c) {
      (*invstd)[static_cast<std::size_t>(c)] =
          static_cast<S>(1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps));
    }
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
        const S muc = static_cast<S>(mu[static_cast<std::size_t>(c)]);
        const S is = (*invstd)[static_cast<std::size_t>(c)];
        const S gc = pg[c], bc = pbt[c];
        for (std::size_t i = 0; i < plane; ++i) {
          const S xh = (px[base + i] - muc) * is;
          (*xhat)[base + i] = xh;
          po[base + i] = gc * xh + bc;
        }
      }
    if (ops::track(tape, {&x, &gamma, &beta})) {
      out.enable_grad();
      TensorT<S> xc = x, gc = gamma, bc = beta, oc = out;
      tape->push([xc, gc, bc, oc, xhat, invstd, batch_grad, N, C, plane]() mutable {
        const S* g = oc.grad();
        const double m = static_cast<double>(N) * plane;
        // per-channel reductions
        std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
        std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
            double a = 0.0, b2 = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
              a += static_cast<double>(g[base + i]);
              b2 += static_cast<double>(g[base + i]) * (*xhat)[base + i];
            }
            sum_g[static_cast<std::size_t>(c)] += a;
            sum_gx[static_cast<std::size_t>(c)] += b2;
          }
        if (bc.requires_grad()) {
          S* gb = bc.grad();
          for (int c = 0; c < C; ++c) gb[c] += static_cast<S>(sum_g[static_cast<std::size_t>(c)]);
        }
        if (gc.requires_grad()) {
          S* gg = gc.grad();
          for (int c = 0; c < C; ++c) gg[c] += static_cast<S>(sum_gx[static_cast<std::size_t>(c)]);
        }
        if (xc.requires_grad()) {
          S* gx = xc.grad();
          const S* pgm = gc.data();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
              const double gam = static_cast<double>(pgm[c]);
              const double is = static_cast<double>((*invstd)[static_cast<std::size_t>(c)]);
              if (batch_grad) {
                const double k1 = sum_g[static_cast<std::size_t>(c)] / m;
                const double k2 = sum_gx[static_cast<std::size_t>(c)] / m;
                for (std::size_t i = 0; i < plane; ++i) {
                  const double dy = static_cast<double>(g[base + i]);
                  const double xh = static_cast<double>((*xhat)[base + i]);
                  gx[base + i] += static_cast<S>(gam * is * (dy - k1 - xh * k2));
                }
              } else {
                for (std::size_t i = 0; i < plane; ++i)
                  gx[base + i] += static_cast<S>(gam * is * static_cast<double>(g[base + i]));
              }
            }
        }
      });
    }
    return out;
  }

  TensorT<S> forward_gn(Tape<S>* tape, const TensorT<S>& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int G = groups, Cg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t gsz = static_cast<std::size_t>(Cg) * plane;
    TensorT<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto invstd = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * G);
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pbt = beta.data();
    S* po = out.data();
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < G; ++g) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * Cg) * plane;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) {
          const double v = static_cast<double>(px[base + i]);
          s1 += v;
          s2 += v * v;
        }
        const double mu = s1 / static_cast<double>(gsz);
        double var = s2 / static_cast<double>(gsz) - mu * mu;
        if (var < 0.0) var = 0.0;
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[static_cast<std::size_t>(n) * G + g] = static_cast<S>(is);
        for (int cc = 0; cc < Cg; ++cc) {
          const int c = g * Cg + cc;
          const std::size_t cbase = base + static_cast<std::size_t>(cc) * plane;
          const S gcv = pg[c], bcv = pbt[c];
          for (std::size_t i = 0; i < plane; ++i) {
            const S xh = static_cast<S>((static_cast<double>(px[cbase + i]) - mu) * is);
            (*xhat)[cbase + i] = xh;
            po[cbase + i] = gcv * xh + bcv;
          }
        }
      }
    if (ops::track(tape, {&x, &gamma, &beta})) {
      out.enable_grad();
      TensorT<S> xc = x, gc = gamma, bc = beta, oc = out;
      const int G2 = G, Cg2 = Cg;
      tape->push([xc, gc, bc, oc, xhat, invstd, N, C, G2, Cg2, plane]() mutable {
        const S* g = oc.grad();
        const S* pgm = gc.data();
        const double m = static_cast<double>(Cg2) * plane;
        if (bc.requires_grad() || gc.requires_grad()) {
          S* gb = bc.requires_grad() ? bc.grad() : nullptr;
          S* gg = gc.requires_grad() ? gc.grad() : nullptr;
          for (int c = 0; c < C; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (int n = 0; n < N; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                sg += static_cast<double>(g[base + i]);
                sgx += static_cast<double>(g[base + i]) * (*xhat)[base + i];
              }
            }
            if (gb) gb[c] += static_cast<S>(sg);
            if (gg) gg[c] += static_cast<S>(sgx);
          }
        }
        if (xc.requires_grad()) {
          S* gx = xc.grad();
          for (int n = 0; n < N; ++n)
            for (int grp = 0; grp < G2; ++grp) {
              const std::size_t base =
                  (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(grp) * Cg2) * plane;
              // dxhat = dy * gamma_c; reduce over the group
              double sum_d = 0.0, sum_dx = 0.0;
              for (int cc = 0; cc < Cg2; ++cc) {
                const int c = grp * Cg2 + cc;
                const std::size_t cbase = base + static_cast<std::size_t>(cc) * plane;
                const double gam = static_cast<double>(pgm[c]);
                for (std::size_t i = 0; i < plane; ++i) {
                  const double d = gam * static_cast<double>(g[cbase + i]);
                  sum_d += d;
                  sum_dx += d * (*xhat)[cbase + i];
                }
              }
              const double is = static_cast<double>((*invstd)[static_cast<std::size_t>(n) * G2 + grp]);
              const double k1 = sum_d / m, k2 = sum_dx / m;
              for (int cc = 0; cc < Cg2; ++cc) {
                const int c = grp * Cg2 + cc;
                const std::size_t cbase = base + static_cast<std::size_t>(cc) * plane;
                const double gam = static_cast<double>(pgm[c]);
                for (std::size_t i = 0; i < plane; ++i) {
                  const double d = gam * static_cast<double>(g[cbase + i]);
                  const double xh = (*xhat)[cbase + i];
                  gx[cbase + i] += static_cast<S>(is * (d - k1 - xh * k2));
                }
              }
            }
        }
      });
    }
    return out;
  }
};

}  // namespace ttalab
