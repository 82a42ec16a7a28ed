#pragma once

#include <cstdint>
#include <string_view>

#include "ttalab/data.hpp"

namespace ttalab {

// Parametric distribution shifts at five severities, plus identity. These are
// documented stand-ins with monotone distortion families, not pixel-exact
// reproductions of any published corruption suite.
enum class CorruptionKind { kOri, kGlass, kFog, kContrast, kGaussNoise };

const char* corruption_name(CorruptionKind k);
CorruptionKind corruption_from_name(std::string_view name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kOri;
  int severity = 5;  // 1..5, 5 strongest
  std::uint64_t seed = 0;

  void validate() const;
};

// Severity constants, exposed for tests and documentation.
//   contrast: x' = (x - mean)*c + mean, per image over all channels
//   fog:      x' = (1-f)*x + f*haze, haze a smooth low-frequency field
//   glass:    local swaps within radius r, `severity` raster passes
//   noise:    x' = clamp(x + sigma*N(0,1))
double contrast_factor(int severity);
double fog_strength(int severity);
int glass_radius(int severity);
double noise_sigma(int severity);

// Corrupts every image of an {N,C,H,W} batch independently; image n draws
// from a stream named by (spec.seed, salt + n), so results do not depend on
// how the batch is partitioned. Output is clamped to [0,1], shape preserved.
Tensor apply_corruption(const Tensor& x, const CorruptionSpec& spec,
                        std::uint64_t salt = 0);

// Same corruption over a labeled set; labels pass through untouched.
LabeledDataset corrupt_dataset(const LabeledDataset& ds, const CorruptionSpec& spec);

}  // namespace ttalab
