#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "ttalab/attack.hpp"
#include "ttalab/train.hpp"

namespace ttalab {

// Countermeasures: three input preprocessors applied uniformly to all test
// traffic (bit-depth reduction, random resize-and-pad, lossy recompression)
// plus adversarial training for rotation-branch models.
enum class DefenseKind { kNone, kBdr, kRrp, kJc, kAt };

const char* defense_name(DefenseKind k);
DefenseKind defense_from_name(std::string_view name);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::kNone;
  int bdr_bits = 4;      // in [1,8]
  int jc_quality = 50;   // in [1,100]
  int rrp_canvas = 0;    // fixed output side; 0 -> ceil(1.25 * W) at apply time
  double at_eps = 16.0 / 255.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Quantizes to 2^bits levels per channel: round-half-up of x*(2^bits-1),
// rescaled back into [0,1].
Tensor bdr(const Tensor& x, int bits);

// One resize-and-pad draw, recorded for coverage tests: the content canvas
// grows to side x side and the image sits at offset (oh, ow).
struct RrpDraw {
  int side = 0;
  int oh = 0;
  int ow = 0;
};

// Per image: draw side in [W, canvas], then offsets (oh, ow) in [0, side-W]
// (drawn in that order), place the image on a zero side^2 canvas and pad to
// the fixed canvas^2 output. canvas = 0 means ceil(1.25 * W). The model's
// adaptive pooling consumes the enlarged side without architecture changes.
Tensor rrp(const Tensor& x, Rng& rng, int canvas = 0,
           std::vector<RrpDraw>* draws = nullptr);

// Lossy 8-bit recompression round trip at the given quality in [1,100],
// in memory. Codec failures raise IoError; the input is never silently
// passed through.
Tensor jc(const Tensor& x, int quality);

// Stream-facing wrapper: applies the configured preprocessor to every batch
// it is handed and counts invocations, so a harness can assert that 100% of
// traffic went through it. kNone counts but passes through; kAt is a
// training-time defense and is rejected here.
class Preprocessor {
 public:
  explicit Preprocessor(const DefenseSpec& spec);

  Tensor apply(const Tensor& x);

  const DefenseSpec& spec() const { return spec_; }
  std::uint64_t invocations() const { return invocations_; }
  std::uint64_t images_seen() const { return images_; }

 private:
  DefenseSpec spec_;
  Rng rng_;
  std::uint64_t invocations_ = 0;
  std::uint64_t images_ = 0;
};

// Adversarial joint training. Each batch optimizes the four-term sum: clean
// main cross-entropy + clean rotation cross-entropy + the same two terms on
// per-image adversarial examples generated with the rotation-variant attack
// against the evolving model itself (i_iter sweeps of i_adv steps, budget
// eps_at). eps_at = 0 degenerates to duplicated clean terms. Returns the
// final epoch's mean four-term loss.
double adversarial_train(Model& m, const LabeledDataset& train,
                         const TrainConfig& cfg, double eps_at,
                         int i_iter = 2, int i_adv = 5);

}  // namespace ttalab
