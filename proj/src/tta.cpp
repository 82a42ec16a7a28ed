#include "ttalab/tta.hpp"

#include <cmath>
#include <limits>

namespace ttalab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::uint64_t hash_doubles(const std::vector<double>& v, std::uint64_t h) {
  return v.empty() ? h : fnv1a(v.data(), v.size() * sizeof(double), h);
}

}  // namespace

const char* tta_method_name(TtaMethod m) {
  switch (m) {
    case TtaMethod::kTtt: return "ttt";
    case TtaMethod::kDua: return "dua";
    case TtaMethod::kTent: return "tent";
    case TtaMethod::kRpl: return "rpl";
  }
  throw ContractError("tta: unknown method");
}

TtaMethod tta_method_from_name(const std::string& name) {
  if (name == "ttt") return TtaMethod::kTtt;
  if (name == "dua") return TtaMethod::kDua;
  if (name == "tent") return TtaMethod::kTent;
  if (name == "rpl") return TtaMethod::kRpl;
  throw ConfigError("tta: unknown method '" + name + "'");
}

bool tta_is_single(TtaMethod m) {
  return m == TtaMethod::kTtt || m == TtaMethod::kDua;
}

void TtaConfig::validate() const {
  if (ttt_lr <= 0.0 || lr <= 0.0) throw ConfigError("tta: learning rates must be positive");
  if (ttt_momentum < 0.0 || ttt_momentum >= 1.0 || momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("tta: momentum must be in [0,1)");
  if (q <= 0.0 || q > 1.0) throw ConfigError("tta: q must be in (0,1]");
  if (dua_w <= 0.0 || dua_w >= 1.0) throw ConfigError("tta: decay w must be in (0,1)");
  if (dua_rho0 <= 0.0 || dua_rho0 >= 1.0) throw ConfigError("tta: rho0 must be in (0,1)");
  if (dua_xi <= 0.0 || dua_xi >= dua_rho0) throw ConfigError("tta: xi must be in (0,rho0)");
  if (dua_copies < 2) throw ConfigError("tta: augmented copies must be >= 2");
  if (eval_batch < 2) throw ConfigError("tta: eval batch must be >= 2");
}

TtaEngine::TtaEngine(Model& model, const TtaConfig& cfg)
    : model_(model), cfg_(cfg), rng_(fold_seed(cfg.seed, "tta-engine")), last_loss_(kNan) {
  cfg_.validate();
  if (cfg_.method == TtaMethod::kTtt) {
    if (!model_.has_ssl())
      throw ConfigError("tta: the rotation rule needs a model with an ssl branch");
    opt_ = Sgd(cfg_.ttt_lr, cfg_.ttt_momentum);
  } else {
    auto norms = model_.norm_layers();
    if (norms.empty()) throw ConfigError("tta: model has no normalization layers");
    for (auto* n : norms)
      if (n->kind != NormKind::kBatchNorm)
        throw ConfigError("tta: statistics/affine rules need batch-norm layers");
    if (cfg_.method == TtaMethod::kDua) {
      for (auto* n : norms) {
        n->rho = cfg_.dua_rho0;
        n->xi = cfg_.dua_xi;
      }
    } else {
      opt_ = Sgd(cfg_.lr, cfg_.momentum);
    }
  }
}

std::uint64_t TtaEngine::frozen_hash() const {
  Model& m = model_;
  std::uint64_t h = 1469598103934665603ull;
  switch (cfg_.method) {
    case TtaMethod::kTtt:
      return Model::partition_hash(m.params_main_branch());
    case TtaMethod::kDua:
      return Model::partition_hash(m.params_all());
    case TtaMethod::kTent:
    case TtaMethod::kRpl: {
      // everything but gamma/beta is frozen, running statistics included
      auto affine = m.params_norm_affine();
      auto is_affine = [&affine](const Tensor* t) {
        for (const auto& a : affine)
          if (a.tensor == t) return true;
        return false;
      };
      std::vector<Param> frozen;
      for (const auto& p : m.params_all())
        if (!is_affine(p.tensor)) frozen.push_back(p);
      h = Model::partition_hash(frozen);
      for (const auto* n : m.norm_layers()) {
        h = hash_doubles(n->running_mu, h);
        h = hash_doubles(n->running_var, h);
      }
      return h;
    }
  }
  throw ContractError("tta: unknown method");
}

void TtaEngine::assert_frozen(std::uint64_t before) const {
  if (frozen_hash() != before)
    throw ContractError("tta: frozen parameter partition changed during a step");
}

Tensor TtaEngine::dua_augmented_batch(const Tensor& x) {
  std::vector<Tensor> copies;
  copies.reserve(static_cast<std::size_t>(cfg_.dua_copies));
  for (int i = 0; i < cfg_.dua_copies; ++i) copies.push_back(augment_adapt(x, rng_));
  return ops::stack_images(copies);
}

int TtaEngine::step_single(const Tensor& x) {
  check(tta_is_single(cfg_.method), "tta: batch rule fed a single image");
  check(x.rank() == 4 && x.dim(0) == 1, "tta: step_single expects {1,C,H,W}");
  const std::uint64_t before = frozen_hash();

  if (cfg_.method == TtaMethod::kTtt) {
    auto [rot, labels] = rotation_batch(x);
    TapeF tape;
    Tensor logits = model_.forward_ssl(&tape, rot, NormMode::kEval);
    Tensor loss = ops::ce_loss(&tape, logits, labels);
    auto params = model_.params_extractor();
    for (const auto& p : model_.params_ssl_branch()) params.push_back(p);
    Sgd::zero_grad(params);
    tape.backward(loss);
    opt_.step(params);
    last_loss_ = static_cast<double>(loss.item());
  } else {
    // decay the momentum, then fold the augmented batch into the statistics
    auto norms = model_.norm_layers();
    const double rho = norms.front()->rho * cfg_.dua_w;
    for (auto* n : norms) {
      n->rho = rho;
      n->momentum = rho + cfg_.dua_xi;
    }
    Tensor batch = dua_augmented_batch(x);
    (void)model_.forward_main(nullptr, batch, NormMode::kTrain);
    last_loss_ = kNan;
  }

  ++t_;
  assert_frozen(before);
  Tensor logits = model_.forward_main(nullptr, x, NormMode::kEval);
  return ops::argmax_rows(logits)[0];
}

std::vector<int> TtaEngine::step_batch(const Tensor& xb) {
  check(!tta_is_single(cfg_.method), "tta: single-image rule fed a batch");
  check(xb.rank() == 4, "tta: step_batch expects NCHW");
  if (xb.dim(0) < 2) throw DegenerateBatchError("tta: batch rules need batch size >= 2");
  const std::uint64_t before = frozen_hash();

  // one forward serves prediction (pre-update affine) and the update loss
  TapeF tape;
  Tensor logits = model_.forward_main(&tape, xb, NormMode::kBatchStats);
  std::vector<int> preds = ops::argmax_rows(logits);

  BatchLoss which = cfg_.batch_loss;
  if (which == BatchLoss::kDefault)
    which = cfg_.method == TtaMethod::kTent ? BatchLoss::kEntropy : BatchLoss::kGce;
  Tensor loss = which == BatchLoss::kEntropy
                    ? ops::entropy_loss(&tape, logits)
                    : ops::gce_loss(&tape, logits, cfg_.q);

  auto affine = model_.params_norm_affine();
  Sgd::zero_grad(affine);
  tape.backward(loss);
  opt_.step(affine);
  last_loss_ = static_cast<double>(loss.item());

  ++t_;
  assert_frozen(before);
  return preds;
}

std::vector<int> TtaEngine::predict_eval(const Tensor& xb) {
  Tensor logits = model_.forward_main(nullptr, xb, NormMode::kEval);
  return ops::argmax_rows(logits);
}

double TtaEngine::evaluate(const LabeledDataset& eval_set) {
  if (eval_set.size() == 0) throw ConfigError("tta: empty evaluation set");
  int correct = 0;

  if (cfg_.method == TtaMethod::kDua) {
    // statistics rule: freeze and predict directly
    for (int s = 0; s < eval_set.size(); s += cfg_.eval_batch) {
      std::vector<int> idx;
      for (int i = s; i < std::min(eval_set.size(), s + cfg_.eval_batch); ++i)
        idx.push_back(i);
      LabeledDataset mb = subset(eval_set, idx);
      auto preds = predict_eval(mb.images);
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == mb.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / eval_set.size();
  }

  const Snapshot snap = snapshot();
  if (tta_is_single(cfg_.method)) {
    for (int i = 0; i < eval_set.size(); ++i) {
      LabeledDataset one = subset(eval_set, {i});
      const int pred = step_single(one.images);
      if (pred == one.labels[0]) ++correct;
      restore(snap);
    }
  } else {
    for (int s = 0; s < eval_set.size(); s += cfg_.eval_batch) {
      std::vector<int> idx;
      for (int i = s; i < std::min(eval_set.size(), s + cfg_.eval_batch); ++i)
        idx.push_back(i);
      LabeledDataset mb = subset(eval_set, idx);
      // a trailing singleton cannot form batch statistics; predict it frozen
      auto preds = mb.size() >= 2 ? step_batch(mb.images) : predict_eval(mb.images);
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == mb.labels[i]) ++correct;
      restore(snap);
    }
  }
  return static_cast<double>(correct) / eval_set.size();
}

TtaEngine::Snapshot TtaEngine::snapshot() const {
  return Snapshot{Checkpoint::capture(model_), opt_.velocities(), t_, last_loss_,
                  rng_.serialize()};
}

void TtaEngine::restore(const Snapshot& s) {
  s.model.restore_into(model_);
  opt_.velocities() = s.velocities;
  t_ = s.t;
  last_loss_ = s.last_loss;
  rng_.deserialize(s.rng);
}

std::uint64_t TtaEngine::state_hash() const {
  std::uint64_t h = model_.state_hash();
  h = fnv1a(&t_, sizeof(t_), h);
  h = fnv1a(&last_loss_, sizeof(last_loss_), h);
  for (const auto& [name, v] : opt_.velocities()) {
    h = fnv1a(name.data(), name.size(), h);
    if (!v.empty()) h = fnv1a(v.data(), v.size() * sizeof(float), h);
  }
  const std::string r = rng_.serialize();
  h = fnv1a(r.data(), r.size(), h);
  return h;
}

double TtaEngine::dua_rho() const {
  check(cfg_.method == TtaMethod::kDua, "tta: rho is only defined for the statistics rule");
  return model_.norm_layers().front()->rho;
}

std::vector<DuaOracleStep> dua_oracle(double stat0, double rho0, double w, double xi,
                                      const std::vector<double>& batch_stats) {
  std::vector<DuaOracleStep> out;
  out.reserve(batch_stats.size());
  double stat = stat0, rho = rho0;
  for (double b : batch_stats) {
    rho *= w;
    const double m = rho + xi;
    stat = (1.0 - m) * stat + m * b;  // literal recurrence, not the delta form
    out.push_back({stat, rho});
  }
  return out;
}

}  // namespace ttalab
