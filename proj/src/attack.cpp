#include "ttalab/attack.hpp"

#include <cmath>

namespace ttalab {

double AttackConfig::alpha_at(int j) const {
  for (const auto& s : schedule)
    if (j < s.until) return s.alpha;
  return schedule.back().alpha;
}

void AttackConfig::validate() const {
  if (eps < 0.0 || eps > 1.0) throw ConfigError("attack: eps must be in [0,1]");
  if (p < 0.0 || p > 1.0) throw ConfigError("attack: diversity p must be in [0,1]");
  if (i_adv < 1 || i_iter < 1) throw ConfigError("attack: iteration counts must be >= 1");
  if (mu < 0.0) throw ConfigError("attack: momentum decay must be >= 0");
  if (sigma2_dua < 0.0) throw ConfigError("attack: noise variance must be >= 0");
  if (schedule.empty()) throw ConfigError("attack: empty step schedule");
  int prev_until = 0;
  for (const auto& s : schedule) {
    if (s.alpha <= 0.0) throw ConfigError("attack: step size must be positive");
    // eps = 0 is the degenerate identity budget; any step size collapses
    if (eps > 0.0 && s.alpha > eps) throw ConfigError("attack: step size exceeds eps");
    if (s.until <= prev_until) throw ConfigError("attack: schedule stages must ascend");
    prev_until = s.until;
  }
}

AttackConfig AttackConfig::for_method(TtaMethod m) {
  AttackConfig cfg;
  if (m == TtaMethod::kTent || m == TtaMethod::kRpl) {
    cfg.schedule = {{1 << 30, 1.0 / 255.0}};
    cfg.i_adv = 200;
  }
  return cfg;
}

Tensor diverse_transform(TapeF* tape, const Tensor& x, double p, Rng& rng,
                         int h_max) {
  check(x.rank() == 4, "diverse_transform: expected NCHW");
  const int H = x.dim(2), W = x.dim(3);
  check(H == W, "diverse_transform: square images only");
  check(p >= 0.0 && p <= 1.0, "diverse_transform: p must be in [0,1]");
  if (h_max <= 0) h_max = static_cast<int>(std::ceil(1.1 * H));
  check(h_max >= H, "diverse_transform: h_max must be >= the input side");
  if (!rng.bernoulli(p)) return x;

  const int d = h_max - H;  // shrink depth; 0 when h_max == H
  const int side = H - static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d + 1)));
  if (side == H) return x;  // resize is a no-op, padding offset has no room

  Tensor small = ops::resize_nearest(tape, x, side, side);
  const int oh = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(H - side + 1)));
  const int ow = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(W - side + 1)));
  return ops::place_on_canvas(tape, small, H, W, oh, ow);
}

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.vec()[i]) -
                                     static_cast<double>(b.vec()[i])));
  return worst;
}

}  // namespace

Tensor dim_attack(const Tensor& x_start, const Tensor& ball_center,
                  std::optional<int> label, Model& surrogate,
                  const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  check(x_start.shape() == ball_center.shape(), "attack: start/center shape mismatch");
  if (label && !surrogate.has_ssl())
    throw ConfigError("attack: rotation loss needs a model with an ssl branch");

  Tensor x = x_start.clone();
  std::vector<double> g(x.numel(), 0.0);  // momentum accumulator

  for (int j = 0; j < cfg.i_adv; ++j) {
    Tensor xj = x.clone();
    xj.enable_grad();
    TapeF tape;
    Tensor t = diverse_transform(&tape, xj, cfg.p, rng);
    Tensor loss;
    if (label) {
      Tensor logits = surrogate.forward_ssl(&tape, t, NormMode::kEval);
      loss = ops::ce_loss(&tape, logits, std::vector<int>(static_cast<std::size_t>(t.dim(0)), *label));
    } else {
      Tensor logits = surrogate.forward_main(&tape, t, NormMode::kEval);
      loss = ops::entropy_loss(&tape, logits);
      // entropy is capped at ln C; anything above is a numerical fault
      check(static_cast<double>(loss.item()) <=
                std::log(static_cast<double>(logits.dim(1))) + 1e-4,
            "attack: entropy exceeded its ln C bound");
    }
    tape.backward(loss);

    const float* gr = xj.grad();
    double l1 = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) l1 += std::abs(static_cast<double>(gr[i]));
    // zero-gradient guard: skip normalization, keep the accumulator finite
    const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
    const double alpha = cfg.alpha_at(j);
    float* xd = x.data();
    const float* anchor = cfg.literal_step ? ball_center.data() : x.data();
    const float* center = ball_center.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      g[i] = cfg.mu * g[i] + static_cast<double>(gr[i]) * inv;
      const double step = g[i] > 0.0 ? alpha : (g[i] < 0.0 ? -alpha : 0.0);
      const double x_adv = static_cast<double>(anchor[i]) + step;
      double delta = x_adv - static_cast<double>(center[i]);
      if (delta > cfg.eps) delta = cfg.eps;
      if (delta < -cfg.eps) delta = -cfg.eps;
      double v = static_cast<double>(center[i]) + delta;
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
      xd[i] = static_cast<float>(v);
    }
  }
  return x;
}

Tensor poigen(TtaMethod method, const Tensor& x_in, Model* surrogate,
              const AttackConfig& cfg, std::uint64_t salt) {
  cfg.validate();
  check(x_in.rank() == 4 && x_in.dim(0) == 1, "poigen: expected one {1,C,H,W} image");
  Rng rng(fold_seed(fold_seed(cfg.seed, "poigen"), salt));

  Tensor out;
  switch (method) {
    case TtaMethod::kTtt: {
      if (surrogate == nullptr || !surrogate->has_ssl())
        throw ConfigError("poigen: rotation variant needs an ssl-branch surrogate");
      // The candidate re-enters the input frame after every inner call, so
      // the label always names the true rotation of the attacked view and
      // the four per-rotation perturbations accumulate on one image.
      Tensor x = x_in;
      for (int i = 0; i < cfg.i_iter; ++i) {
        for (int yp = 1; yp <= 4; ++yp) {
          const int k = yp % 4;
          Tensor xr = ops::rot90(x, k);
          // rot90 permutes pixels, so attacking in the rotated frame against
          // the rotated budget ball and undoing the rotation afterwards is
          // exactly the input-frame step
          Tensor center = ops::rot90(x_in, k);
          xr = dim_attack(xr, center, k, *surrogate, cfg, rng);
          x = ops::rot90(xr, (4 - k) % 4);
        }
      }
      out = x;
      break;
    }
    case TtaMethod::kTent:
    case TtaMethod::kRpl: {
      // one entropy-maximizing sample serves both batch rules
      if (surrogate == nullptr) throw ConfigError("poigen: entropy variant needs a surrogate");
      out = dim_attack(x_in, x_in, std::nullopt, *surrogate, cfg, rng);
      break;
    }
    case TtaMethod::kDua: {
      out = x_in.clone();
      const double sigma = std::sqrt(cfg.sigma2_dua);
      float* v = out.data();
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const double noise = cfg.mu_dua + sigma * rng.normal();
        double y = static_cast<double>(v[i]) + cfg.eps * noise;
        if (y < 0.0) y = 0.0;
        if (y > 1.0) y = 1.0;
        v[i] = static_cast<float>(y);
      }
      return out;  // the noise variant has no l-inf contract
    }
    default:
      throw ConfigError("poigen: unknown method");
  }

  check(max_abs_diff(out, x_in) <= cfg.eps + 1e-6, "poigen: budget violated");
  return out;
}

}  // namespace ttalab
