#pragma once

#include "ttalab/data.hpp"
#include "ttalab/model.hpp"
#include "ttalab/optim.hpp"

namespace ttalab {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool augment = true;  // random hflip + 4px-pad random crop
};

// Supervised cross-entropy training of a plain (batch-norm) model. Batch
// norm runs in train mode, so running statistics follow the EMA recurrence
// with the layer momentum (0.1). Returns the final epoch's mean loss.
double train_plain(Model& m, const LabeledDataset& train, const TrainConfig& cfg);

// Joint training of a y model: unweighted sum of the main-task
// cross-entropy and the rotation-prediction cross-entropy on the 4-rotation
// batch. Returns the final epoch's mean (joint) loss.
double train_joint(Model& m, const LabeledDataset& train, const TrainConfig& cfg);

// Adversarial joint training: see defense.hpp (adversarial_train).

// Plain top-1 accuracy of the main head under the given norm mode.
double eval_accuracy(Model& m, const LabeledDataset& ds, NormMode mode,
                     int batch_size = 64);

}  // namespace ttalab
