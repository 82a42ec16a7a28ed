#pragma once

#include <optional>
#include <vector>

#include "ttalab/checkpoint.hpp"
#include "ttalab/data.hpp"
#include "ttalab/model.hpp"
#include "ttalab/optim.hpp"

namespace ttalab {

// The four online adaptation rules, as streaming state machines over one
// model. Granularity is part of the method: TTT and DUA consume single
// images, TENT and RPL consume batches.
enum class TtaMethod { kTtt, kDua, kTent, kRpl };

const char* tta_method_name(TtaMethod m);
TtaMethod tta_method_from_name(const std::string& name);
bool tta_is_single(TtaMethod m);  // single-image granularity

// Adaptation loss selector for the batch methods. kDefault picks the
// method's own loss; the overrides exist for A/B experiments that swap the
// loss while keeping the control flow byte-identical.
enum class BatchLoss { kDefault, kEntropy, kGce };

struct TtaConfig {
  TtaMethod method = TtaMethod::kTent;

  // single-image rule: one SGD step on the 4-rotation loss
  double ttt_lr = 0.001;
  double ttt_momentum = 0.0;

  // statistics-only rule: decaying-momentum running-stat updates
  double dua_w = 0.94;    // per-step momentum decay
  double dua_xi = 0.005;  // momentum floor
  double dua_rho0 = 0.1;  // initial momentum
  int dua_copies = 64;    // augmented batch size per image

  // batch rules: SGD on the normalization affine parameters only
  double lr = 0.01;
  double momentum = 0.9;
  double q = 0.8;  // generalized cross-entropy exponent
  BatchLoss batch_loss = BatchLoss::kDefault;

  int eval_batch = 32;  // evaluation batch size for batch methods
  std::uint64_t seed = 0;

  void validate() const;
};

// Owns the adaptation state around a borrowed model. Each step asserts that
// the method's frozen parameter partition is bit-identical before and after
// (hash check); a violation is a contract error.
class TtaEngine {
 public:
  TtaEngine(Model& model, const TtaConfig& cfg);

  TtaMethod method() const { return cfg_.method; }
  int t() const { return t_; }

  // Adaptation loss of the most recent step. NaN until the first step and
  // for every statistics-only (DUA) step, which has no loss.
  double last_loss() const { return last_loss_; }

  // One adaptation event. step_single handles TTT/DUA ({1,C,H,W} input,
  // returns the predicted class); step_batch handles TENT/RPL ({N>=2,...},
  // returns per-sample predictions made with the pre-update affine
  // parameters). Wrong granularity is a contract error.
  int step_single(const Tensor& x);
  std::vector<int> step_batch(const Tensor& xb);

  // Top-1 accuracy under the method's evaluation protocol: adapt on the
  // sample/batch, predict, then restore the pre-evaluation state (TTT, TENT,
  // RPL), or freeze and predict directly (DUA). Engine state (model,
  // optimizer velocities, counters, rng) is identical before and after.
  double evaluate(const LabeledDataset& eval_set);

  // Fingerprint of all semantic engine state (instrumentation counters
  // excluded): model parameters and statistics, step counter, last loss,
  // optimizer velocities, rng stream.
  std::uint64_t state_hash() const;

  double dua_rho() const;  // current decayed momentum (statistics rule)
  Model& model() { return model_; }

 private:
  struct Snapshot {
    Checkpoint model;
    std::map<std::string, std::vector<float>> velocities;
    int t;
    double last_loss;
    std::string rng;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

  std::uint64_t frozen_hash() const;
  void assert_frozen(std::uint64_t before) const;
  Tensor dua_augmented_batch(const Tensor& x);
  std::vector<int> predict_eval(const Tensor& xb);

  Model& model_;
  TtaConfig cfg_;
  Sgd opt_;
  Rng rng_;
  int t_ = 0;
  double last_loss_;
};

// Scalar oracle for the statistics trajectory: given per-step batch means
// (or variances) for one channel, replay the decaying-momentum recurrence
// independently of any layer code. Returns {stat_t, rho_t} pairs.
struct DuaOracleStep {
  double stat;
  double rho;
};
std::vector<DuaOracleStep> dua_oracle(double stat0, double rho0, double w, double xi,
                                      const std::vector<double>& batch_stats);

}  // namespace ttalab
