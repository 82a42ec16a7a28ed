#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ttalab/layers.hpp"
#include "ttalab/rng.hpp"

namespace ttalab {

using Scalar = float;
using Tensor = TensorT<Scalar>;
using TapeF = Tape<Scalar>;
using Conv2d = Conv2dT<Scalar>;
using Linear = LinearT<Scalar>;
using NormLayer = NormLayerT<Scalar>;
using Param = NamedParam<Scalar>;

// Architecture descriptor. Two shapes are supported:
//  - "plain": conv blocks with batch norm, global average pool, linear head.
//  - "y":     shared extractor (group norm) up to split_point, then a main
//             classification branch and a 4-way rotation branch; the rotation
//             branch starts as a parameter copy of the main branch except for
//             its own final layer.
// Every block is conv3x3(stride 2) + norm + ReLU; the pool is adaptive, so
// the nets consume any input size >= 2^(number of blocks) pixels per side.
struct ArchSpec {
  std::string kind = "plain";    // "plain" | "y"
  std::vector<int> widths = {16, 32, 64, 64};
  int in_channels = 3;
  int num_classes = 10;
  int split_point = 3;  // y only: blocks [0,split) are shared; 1 <= split <= blocks
  int gn_groups = 8;    // y only; clamped per layer to the channel count
  int ssl_classes = 4;

  std::string serialize() const;
  static ArchSpec deserialize(const std::string& s);
  void validate() const;
};

struct Block {
  Conv2d conv;
  NormLayer norm;
};

class Model {
 public:
  Model() = default;
  Model(const ArchSpec& arch, std::uint64_t seed);

  const ArchSpec& arch() const { return arch_; }
  bool has_ssl() const { return arch_.kind == "y"; }
  int num_classes() const { return arch_.num_classes; }

  // Logits of the main classification head, {N, num_classes}. Non-const:
  // batch-stat modes touch per-layer statistics.
  Tensor forward_main(TapeF* tape, const Tensor& x, NormMode mode);
  // Logits of the rotation head, {N, 4}. Plain models reject this.
  Tensor forward_ssl(TapeF* tape, const Tensor& x, NormMode mode);
  // Pre-head pooled features, {N, widths.back()}.
  Tensor forward_features(TapeF* tape, const Tensor& x, NormMode mode);

  // Parameter partitions. Names are stable and used for checkpoint sections,
  // optimizer velocities and frozen-partition hashes.
  std::vector<Param> params_all();
  std::vector<Param> params_extractor();    // y: shared blocks
  std::vector<Param> params_ssl_branch();   // y: ssl blocks + ssl head
  std::vector<Param> params_main_branch();  // y: post-split main blocks + head
  std::vector<Param> params_norm_affine();  // every norm layer's gamma/beta

  std::vector<NormLayer*> norm_layers();
  std::vector<const NormLayer*> norm_layers() const;

  // Total number of scalar parameters (analytic count checked in tests).
  std::size_t param_count();

  // Forward-invocation counter; instrumentation for the no-target-access
  // property of poison generation.
  long forward_count() const { return forward_count_; }
  void reset_forward_count() { forward_count_ = 0; }

  // FNV-1a over a parameter partition's current values, in name order.
  static std::uint64_t partition_hash(const std::vector<Param>& params);
  // Hash over every piece of model state: params + norm stats + rho.
  std::uint64_t state_hash();

 private:
  Tensor run_blocks(TapeF* tape, const Tensor& x, NormMode mode,
                    std::vector<Block>& blocks, int lo, int hi);

  ArchSpec arch_;
  std::vector<Block> blocks_;      // plain: all; y: shared + main tail
  std::vector<Block> ssl_blocks_;  // y only: copies of main tail blocks
  Linear fc_main_;
  Linear fc_ssl_;  // y only
  mutable long forward_count_ = 0;

  friend class Checkpoint;
};

}  // namespace ttalab
