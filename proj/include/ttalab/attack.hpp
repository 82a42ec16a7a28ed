#pragma once

#include <optional>
#include <vector>

#include "ttalab/model.hpp"
#include "ttalab/rng.hpp"
#include "ttalab/tta.hpp"

namespace ttalab {

// Step-size schedule for the iterative attack: stage k applies while the
// iteration index is below `until`. The last stage covers the rest.
struct AlphaStage {
  int until;
  double alpha;
};

struct AttackConfig {
  double eps = 32.0 / 255.0;  // l-inf budget in pixel units
  std::vector<AlphaStage> schedule{{10, 4.0 / 255.0}, {15, 2.0 / 255.0},
                                   {1 << 30, 1.0 / 255.0}};
  int i_adv = 20;   // inner gradient iterations per attack call
  int i_iter = 3;   // outer rotation sweeps (rotation variant only)
  double p = 0.5;   // input-diversity probability
  double mu = 1.0;  // momentum decay of the gradient accumulator

  // Gaussian variant (statistics-rule poisoning): x + eps * N(mu, sigma^2)
  double mu_dua = 0.0;
  double sigma2_dua = 0.8;

  // The published step rule writes x_adv = x_anchor + alpha*sign(g), which
  // with alpha < eps never leaves the alpha-ball and makes a staged schedule
  // pointless; the default accumulates x_adv = x + alpha*sign(g) before the
  // eps projection. The literal rule stays available for comparison.
  bool literal_step = false;

  std::uint64_t seed = 0;

  double alpha_at(int j) const;
  void validate() const;

  // Per-method defaults: rotation variant keeps the staged schedule above;
  // the entropy variant runs a flat 1/255 for 200 iterations.
  static AttackConfig for_method(TtaMethod m);
};

// Input-diversity transform: with probability p, shrink to a random smaller
// side via nearest-neighbor and zero-pad back to the input size at a random
// offset; otherwise pass through. Participates in the tape so attack
// gradients flow through it. The shrink range is derived from
// H_max = ceil(1.1 * H) by default: sides in [H - (H_max - H), H]. Passing
// an explicit h_max overrides it; h_max == H degenerates to the identity.
Tensor diverse_transform(TapeF* tape, const Tensor& x, double p, Rng& rng,
                         int h_max = 0);

// Iterative momentum attack with input diversity. Ascends loss L on the
// surrogate from `x_start`, projecting every iterate into the eps-ball
// around `ball_center` and into [0,1]. `label` selects the loss family:
// with a label, the rotation-head cross-entropy; without, the prediction
// entropy of the main head. Both maximize.
//
// Distinguishing start and center keeps the rotation variant's budget
// anchored to the (suitably rotated) original image across chained calls;
// plain calls pass the same tensor for both.
Tensor dim_attack(const Tensor& x_start, const Tensor& ball_center,
                  std::optional<int> label, Model& surrogate,
                  const AttackConfig& cfg, Rng& rng);

// Poisoned-sample generation against one TTA method. Only a surrogate is
// ever consulted; the rotation variant sweeps per-rotation attacks whose
// perturbations accumulate in the input frame, the entropy variant serves
// both batch rules (identical output), and the statistics variant adds
// clamped Gaussian noise without any model.
// `salt` individualizes the randomness per sample under one config seed.
Tensor poigen(TtaMethod method, const Tensor& x_in, Model* surrogate,
              const AttackConfig& cfg, std::uint64_t salt = 0);

}  // namespace ttalab
