#include "ttalab/corrupt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ttalab {

const char* corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kOri: return "ori";
    case CorruptionKind::kGlass: return "glass";
    case CorruptionKind::kFog: return "fog";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kGaussNoise: return "gauss-noise";
  }
  throw ConfigError("corruption: unknown kind");
}

CorruptionKind corruption_from_name(std::string_view name) {
  if (name == "ori") return CorruptionKind::kOri;
  if (name == "glass") return CorruptionKind::kGlass;
  if (name == "fog") return CorruptionKind::kFog;
  if (name == "contrast") return CorruptionKind::kContrast;
  if (name == "gauss-noise") return CorruptionKind::kGaussNoise;
  throw ConfigError("corruption: unknown kind '" + std::string(name) + "'");
}

void CorruptionSpec::validate() const {
  if (severity < 1 || severity > 5)
    throw ConfigError("corruption: severity must be in 1..5");
}

double contrast_factor(int severity) {
  static const double c[5] = {0.75, 0.60, 0.45, 0.30, 0.15};
  return c[severity - 1];
}

double fog_strength(int severity) {
  static const double f[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
  return f[severity - 1];
}

int glass_radius(int severity) { return severity; }

double noise_sigma(int severity) {
  static const double s[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
  return s[severity - 1];
}

namespace {

float clamp01(double v) {
  return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}

// image points to C contiguous H*W planes
void corrupt_contrast(float* image, int C, int H, int W, int severity) {
  const std::size_t n = static_cast<std::size_t>(C) * H * W;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += image[i];
  mean /= static_cast<double>(n);
  const double c = contrast_factor(severity);
  for (std::size_t i = 0; i < n; ++i)
    image[i] = clamp01((image[i] - mean) * c + mean);
}

// smooth haze: a coarse uniform grid bilinearly stretched over the image,
// shared across channels so the fog is gray
void corrupt_fog(float* image, int C, int H, int W, int severity, Rng& rng) {
  const int G = std::max(2, (std::min(H, W) + 7) / 8);
  std::vector<double> grid(static_cast<std::size_t>(G) * G);
  for (auto& g : grid) g = rng.uniform();

  const double f = fog_strength(severity);
  for (int i = 0; i < H; ++i) {
    const double gy = H > 1 ? static_cast<double>(i) * (G - 1) / (H - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(gy), G - 2);
    const double ty = gy - y0;
    for (int j = 0; j < W; ++j) {
      const double gx = W > 1 ? static_cast<double>(j) * (G - 1) / (W - 1) : 0.0;
      const int x0 = std::min(static_cast<int>(gx), G - 2);
      const double tx = gx - x0;
      const double haze =
          (1 - ty) * ((1 - tx) * grid[static_cast<std::size_t>(y0) * G + x0] +
                      tx * grid[static_cast<std::size_t>(y0) * G + x0 + 1]) +
          ty * ((1 - tx) * grid[static_cast<std::size_t>(y0 + 1) * G + x0] +
                tx * grid[static_cast<std::size_t>(y0 + 1) * G + x0 + 1]);
      for (int ci = 0; ci < C; ++ci) {
        float& px = image[(static_cast<std::size_t>(ci) * H + i) * W + j];
        px = clamp01((1.0 - f) * px + f * haze);
      }
    }
  }
}

// local swaps: severity raster passes, each pixel trades places with a
// neighbor within the severity radius; a pure permutation of pixel sites
void corrupt_glass(float* image, int C, int H, int W, int severity, Rng& rng) {
  const int r = glass_radius(severity);
  for (int pass = 0; pass < severity; ++pass) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const int di = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(-r), static_cast<std::int64_t>(r)));
        const int dj = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(-r), static_cast<std::int64_t>(r)));
        const int si = std::clamp(i + di, 0, H - 1);
        const int sj = std::clamp(j + dj, 0, W - 1);
        if (si == i && sj == j) continue;
        for (int ci = 0; ci < C; ++ci) {
          float* plane = image + static_cast<std::size_t>(ci) * H * W;
          std::swap(plane[i * W + j], plane[si * W + sj]);
        }
      }
    }
  }
}

void corrupt_noise(float* image, int C, int H, int W, int severity, Rng& rng) {
  const double sigma = noise_sigma(severity);
  const std::size_t n = static_cast<std::size_t>(C) * H * W;
  for (std::size_t i = 0; i < n; ++i)
    image[i] = clamp01(image[i] + sigma * rng.normal());
}

}  // namespace

Tensor apply_corruption(const Tensor& x, const CorruptionSpec& spec,
                        std::uint64_t salt) {
  spec.validate();
  check(x.rank() == 4, "corruption: expected NCHW input");
  Tensor out = x.clone();
  if (spec.kind == CorruptionKind::kOri) return out;

  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::uint64_t base = fold_seed(spec.seed, "corrupt");
  for (int n = 0; n < N; ++n) {
    Rng rng(fold_seed(base, salt + static_cast<std::uint64_t>(n)));
    float* image = out.data() + static_cast<std::size_t>(n) * C * H * W;
    switch (spec.kind) {
      case CorruptionKind::kGlass: corrupt_glass(image, C, H, W, spec.severity, rng); break;
      case CorruptionKind::kFog: corrupt_fog(image, C, H, W, spec.severity, rng); break;
      case CorruptionKind::kContrast: corrupt_contrast(image, C, H, W, spec.severity); break;
      case CorruptionKind::kGaussNoise: corrupt_noise(image, C, H, W, spec.severity, rng); break;
      case CorruptionKind::kOri: break;
    }
  }
  return out;
}

LabeledDataset corrupt_dataset(const LabeledDataset& ds, const CorruptionSpec& spec) {
  LabeledDataset out;
  out.images = apply_corruption(ds.images, spec, 0);
  out.labels = ds.labels;
  return out;
}

}  // namespace ttalab
