#include "ttalab/train.hpp"

#include <algorithm>
#include <numeric>

namespace ttalab {

namespace {

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with our RNG for cross-platform determinism
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<int>> batches;
  for (int s = 0; s < n; s += batch_size) {
    const int e = std::min(n, s + batch_size);
    if (e - s < 2) break;  // batch statistics need at least 2 samples
    batches.emplace_back(idx.begin() + s, idx.begin() + e);
  }
  return batches;
}

template <typename LossFn>
double run_epochs(Model& m, const LabeledDataset& train, const TrainConfig& cfg,
                  LossFn&& batch_loss) {
  check(train.size() >= 2, "train: dataset too small");
  check(cfg.epochs >= 1 && cfg.batch_size >= 2, "train: bad epochs/batch size");
  Sgd opt(cfg.lr, cfg.momentum);
  auto params = m.params_all();
  Rng rng(fold_seed(cfg.seed, "train"));
  double epoch_loss = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto batches = epoch_batches(train.size(), cfg.batch_size, rng);
    epoch_loss = 0.0;
    for (const auto& b : batches) {
      LabeledDataset mb = subset(train, b);
      if (cfg.augment) mb.images = augment_flip_crop(mb.images, rng);
      Sgd::zero_grad(params);
      TapeF tape;
      Tensor loss = batch_loss(&tape, mb);
      tape.backward(loss);
      opt.step(params);
      epoch_loss += static_cast<double>(loss.item());
    }
    epoch_loss /= static_cast<double>(batches.size());
  }
  return epoch_loss;
}

}  // namespace

double train_plain(Model& m, const LabeledDataset& train, const TrainConfig& cfg) {
  return run_epochs(m, train, cfg, [&m](TapeF* tape, const LabeledDataset& mb) {
    Tensor logits = m.forward_main(tape, mb.images, NormMode::kTrain);
    return ops::ce_loss(tape, logits, mb.labels);
  });
}

double train_joint(Model& m, const LabeledDataset& train, const TrainConfig& cfg) {
  check(m.has_ssl(), "train_joint: model has no rotation branch");
  return run_epochs(m, train, cfg, [&m](TapeF* tape, const LabeledDataset& mb) {
    Tensor logits = m.forward_main(tape, mb.images, NormMode::kTrain);
    Tensor l_main = ops::ce_loss(tape, logits, mb.labels);
    auto [rot, rot_labels] = rotation_batch(mb.images);
    Tensor ssl_logits = m.forward_ssl(tape, rot, NormMode::kTrain);
    Tensor l_ssl = ops::ce_loss(tape, ssl_logits, rot_labels);
    return ops::add(tape, l_main, l_ssl);  // unweighted 1:1 sum
  });
}

double eval_accuracy(Model& m, const LabeledDataset& ds, NormMode mode,
                     int batch_size) {
  check(ds.size() > 0, "eval_accuracy: empty dataset");
  int correct = 0;
  for (int s = 0; s < ds.size(); s += batch_size) {
    std::vector<int> idx;
    for (int i = s; i < std::min(ds.size(), s + batch_size); ++i) idx.push_back(i);
    LabeledDataset mb = subset(ds, idx);
    Tensor logits = m.forward_main(nullptr, mb.images, mode);
    auto pred = ops::argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == mb.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

}  // namespace ttalab
