#include "ttalab/data.hpp"

#include <cmath>
#include <fstream>

#include "ttalab/checkpoint.hpp"

namespace ttalab {

namespace {

// Fixed master key for class definitions; instance seeds never touch it.
constexpr std::uint64_t kClassKey = 0x7a65b1a3902dull;

struct ClassDef {
  double angle;       // stripe orientation
  double freq;        // stripe frequency (cycles per image)
  double color_w[3];  // stripe color balance
  double blob_x, blob_y;
  double blob_color[3];
};

ClassDef class_def(int cls) {
  Rng rng(fold_seed(kClassKey, static_cast<std::uint64_t>(cls)));
  ClassDef d;
  d.angle = rng.uniform(0.0, 3.14159265358979);
  d.freq = rng.uniform(2.0, 5.0);
  double s = 0.0;
  for (double& w : d.color_w) {
    w = 0.2 + rng.uniform();
    s += w;
  }
  for (double& w : d.color_w) w = 3.0 * w / s;  // mean 1, class-specific balance
  d.blob_x = rng.uniform(0.25, 0.75);
  d.blob_y = rng.uniform(0.25, 0.75);
  for (double& c : d.blob_color) c = rng.uniform(-1.0, 1.0);
  return d;
}

}  // namespace

LabeledDataset make_synthetic(const SyntheticSpec& spec, int count) {
  check(spec.num_classes >= 2, "synthetic: need at least 2 classes");
  check(spec.size >= 8, "synthetic: size too small");
  check(spec.shift >= 0.0 && spec.shift <= 1.0, "synthetic: shift must be in [0,1]");
  check(count >= 0, "synthetic: negative count");
  const int H = spec.size;
  std::vector<ClassDef> defs;
  for (int c = 0; c < spec.num_classes; ++c) defs.push_back(class_def(c));

  LabeledDataset ds;
  ds.images = Tensor(Shape{count, 3, H, H});
  ds.labels.resize(static_cast<std::size_t>(count));
  Rng pool_rng(fold_seed(spec.seed, "synthetic-pool"));

  const double sep = spec.class_separation;
  const double sh = spec.shift;
  const double tint[3] = {0.70, 0.50, 0.30};

  float* base = ds.images.data();
  for (int n = 0; n < count; ++n) {
    Rng rng = pool_rng.child(static_cast<std::uint64_t>(n));
    const int cls = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.num_classes)));
    ds.labels[static_cast<std::size_t>(n)] = cls;
    const ClassDef& d = defs[static_cast<std::size_t>(cls)];

    const double phase = rng.uniform(0.0, 6.28318530717958);
    const double amp = 0.9 + 0.2 * rng.uniform();
    const double jx = d.blob_x + rng.uniform(-0.08, 0.08);
    const double jy = d.blob_y + rng.uniform(-0.08, 0.08);
    const double b0 = 0.35 + 0.1 * rng.uniform();
    const double ca = std::cos(d.angle), sa = std::sin(d.angle);

    float* img = base + static_cast<std::size_t>(n) * 3 * H * H;
    for (int i = 0; i < H; ++i) {
      const double v = static_cast<double>(i) / (H - 1);
      // top-bright luminance ramp: the rotation cue
      const double ramp = 1.25 - 0.5 * v;
      for (int j = 0; j < H; ++j) {
        const double u = static_cast<double>(j) / (H - 1);
        const double stripe = std::sin(6.28318530717958 * d.freq * (u * ca + v * sa) + phase);
        const double dx = u - jx, dy = v - jy;
        const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.015));
        for (int ch = 0; ch < 3; ++ch) {
          double val = b0 + sep * amp * (0.22 * stripe * (d.color_w[ch] - 1.0 + 0.6) +
                                         0.45 * blob * d.blob_color[ch]);
          val *= ramp;
          val += 0.04 * rng.normal();
          // distribution shift: contrast loss toward a warm tint
          val = (1.0 - 0.45 * sh) * val + 0.45 * sh * tint[ch];
          if (val < 0.0) val = 0.0;
          if (val > 1.0) val = 1.0;
          img[(static_cast<std::size_t>(ch) * H + i) * H + j] = static_cast<float>(val);
        }
      }
    }
  }
  return ds;
}

LabeledDataset load_cifar10(const std::vector<std::string>& batch_files) {
  check(!batch_files.empty(), "cifar10: no files given");
  constexpr std::size_t kRecord = 3073;
  std::vector<unsigned char> all;
  for (const auto& path : batch_files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cifar10: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.empty() || buf.size() % kRecord != 0)
      throw IoError("cifar10: " + path + " is not a multiple of 3073 bytes");
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const int n = static_cast<int>(all.size() / kRecord);
  LabeledDataset ds;
  ds.images = Tensor(Shape{n, 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(n));
  float* img = ds.images.data();
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + static_cast<std::size_t>(i) * kRecord;
    const int label = rec[0];
    if (label > 9) throw IoError("cifar10: label byte out of range");
    ds.labels[static_cast<std::size_t>(i)] = label;
    // channel-planar R,G,B row-major
    for (std::size_t k = 0; k < 3072; ++k)
      img[static_cast<std::size_t>(i) * 3072 + k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  Checkpoint cp;
  std::vector<std::int64_t> shape(ds.images.shape().begin(), ds.images.shape().end());
  cp.put_i64("images.shape", shape.data(), shape.size());
  cp.put_f32("images", ds.images.data(), ds.images.numel());
  std::vector<std::int64_t> labels(ds.labels.begin(), ds.labels.end());
  cp.put_i64("labels", labels.data(), labels.size());
  cp.save_file(path);
}

LabeledDataset load_dataset(const std::string& path) {
  Checkpoint cp = Checkpoint::load_file(path);
  auto shape64 = cp.get_i64("images.shape");
  Shape shape(shape64.begin(), shape64.end());
  auto vals = cp.get_f32("images");
  LabeledDataset ds;
  ds.images = Tensor::from_vec(shape, std::move(vals));
  auto labels64 = cp.get_i64("labels");
  ds.labels.assign(labels64.begin(), labels64.end());
  check(static_cast<int>(ds.labels.size()) == ds.images.dim(0),
        "dataset: label count does not match image count");
  return ds;
}

void save_tensor(const Tensor& t, const std::string& path) {
  Checkpoint cp;
  std::vector<std::int64_t> shape(t.shape().begin(), t.shape().end());
  cp.put_i64("shape", shape.data(), shape.size());
  cp.put_f32("data", t.data(), t.numel());
  cp.save_file(path);
}

Tensor load_tensor(const std::string& path) {
  Checkpoint cp = Checkpoint::load_file(path);
  auto shape64 = cp.get_i64("shape");
  Shape shape(shape64.begin(), shape64.end());
  return Tensor::from_vec(shape, cp.get_f32("data"));
}

std::pair<Tensor, std::vector<int>> rotation_batch(const Tensor& x) {
  check(x.rank() == 4, "rotation_batch: expected NCHW");
  const int N = x.dim(0);
  std::vector<Tensor> parts;
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(4 * N));
  for (int k = 0; k < 4; ++k) {
    parts.push_back(ops::rot90(x, k));
    for (int n = 0; n < N; ++n) labels.push_back(k);
  }
  return {ops::stack_images(parts), labels};
}

Tensor augment_flip_crop(const Tensor& img, Rng& rng) {
  check(img.rank() == 4, "augment: expected NCHW");
  Tensor out = img;
  if (rng.bernoulli(0.5)) out = ops::hflip(out);
  const int N = out.dim(0), C = out.dim(1), H = out.dim(2), W = out.dim(3);
  const int pad = 4;
  const int oh = static_cast<int>(rng.uniform_int(std::int64_t{0}, std::int64_t{2 * pad}));
  const int ow = static_cast<int>(rng.uniform_int(std::int64_t{0}, std::int64_t{2 * pad}));
  // crop an HxW window at (oh,ow) from the reflect-padded canvas; reflection
  // keeps the pixel statistics of augmented batches aligned with clean inputs
  check(H > pad && W > pad, "augment: image too small for 4-pixel padding");
  auto reflect = [](int s, int n) { return s < 0 ? -s : (s >= n ? 2 * n - 2 - s : s); };
  Tensor res(Shape{N, C, H, W});
  const float* src = out.data();
  float* dst = res.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* plane = src + (static_cast<std::size_t>(n) * C + c) * H * W;
      float* oplane = dst + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H; ++i) {
        const int si = reflect(i + oh - pad, H);
        for (int j = 0; j < W; ++j) {
          const int sj = reflect(j + ow - pad, W);
          oplane[static_cast<std::size_t>(i) * W + j] =
              plane[static_cast<std::size_t>(si) * W + sj];
        }
      }
    }
  return res;
}

Tensor augment_adapt(const Tensor& img, Rng& rng) {
  Tensor out = augment_flip_crop(img, rng);
  const int k = static_cast<int>(rng.uniform_int(std::uint64_t{4}));
  if (k != 0) out = ops::rot90(out, k);
  return out;
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx) {
  LabeledDataset out;
  const int C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
  out.images = Tensor(Shape{static_cast<int>(idx.size()), C, H, W});
  out.labels.resize(idx.size());
  const std::size_t sz = static_cast<std::size_t>(C) * H * W;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int s = idx[i];
    check(s >= 0 && s < ds.size(), "subset: index out of range");
    std::copy(ds.images.data() + s * sz, ds.images.data() + (s + 1) * sz,
              out.images.data() + i * sz);
    out.labels[i] = ds.labels[static_cast<std::size_t>(s)];
  }
  return out;
}

}  // namespace ttalab
