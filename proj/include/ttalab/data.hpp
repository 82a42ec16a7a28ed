#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ttalab/model.hpp"
#include "ttalab/rng.hpp"

namespace ttalab {

// Images are NCHW float in [0,1].
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;

  int size() const { return images.defined() ? images.dim(0) : 0; }
};

// Synthetic 10-class "blob-texture" image family. Class identity is carried
// by an oriented stripe texture, a class-colored blob, and a class color
// balance; every image additionally carries a top-bright luminance ramp so
// that rotation prediction is learnable. Class definitions are derived from
// a fixed master key (not from `seed`), so pools drawn with different seeds
// are disjoint samples of the same task.
struct SyntheticSpec {
  int num_classes = 10;
  int size = 32;
  double class_separation = 1.0;  // scales class-evidence amplitude
  double shift = 0.0;             // distribution-shift knob in [0,1]
  std::uint64_t seed = 0;
};

LabeledDataset make_synthetic(const SyntheticSpec& spec, int count);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte followed by 3072
// channel-planar pixel bytes (R plane, G plane, B plane, row-major), mapped
// to [0,1] by /255.
LabeledDataset load_cifar10(const std::vector<std::string>& batch_files);

// Dataset / tensor container files (built on the checkpoint section format:
// version byte, magic, named little-endian sections).
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// The 4-rotation self-supervision batch. For an {N,C,H,W} input the result
// is {4N,C,H,W} ordered rotation-major (all 0 deg, then all 90, ...), with
// labels 0..3 meaning k*90 degrees counterclockwise. Square images only.
std::pair<Tensor, std::vector<int>> rotation_batch(const Tensor& x);

// Training-time augmentation: horizontal flip with p=0.5, then a random crop
// from a 4-pixel reflect-padded canvas. Shape and value range are preserved.
Tensor augment_flip_crop(const Tensor& img, Rng& rng);

// Adaptation-time augmentation used to expand a single sample into a batch:
// flip/crop plus a random multiple-of-90 rotation.
Tensor augment_adapt(const Tensor& img, Rng& rng);

// Uniformly sampled subset (without replacement) of a dataset.
LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx);

}  // namespace ttalab
