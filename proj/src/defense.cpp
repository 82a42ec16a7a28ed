#include "ttalab/defense.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <string>

#include <jpeglib.h>

namespace ttalab {

const char* defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kBdr: return "bdr";
    case DefenseKind::kRrp: return "rrp";
    case DefenseKind::kJc: return "jc";
    case DefenseKind::kAt: return "at";
  }
  throw ConfigError("defense: unknown kind");
}

DefenseKind defense_from_name(std::string_view name) {
  if (name == "none") return DefenseKind::kNone;
  if (name == "bdr") return DefenseKind::kBdr;
  if (name == "rrp") return DefenseKind::kRrp;
  if (name == "jc") return DefenseKind::kJc;
  if (name == "at") return DefenseKind::kAt;
  throw ConfigError("defense: unknown kind '" + std::string(name) + "'");
}

void DefenseSpec::validate() const {
  if (bdr_bits < 1 || bdr_bits > 8) throw ConfigError("defense: bits must be in 1..8");
  if (jc_quality < 1 || jc_quality > 100)
    throw ConfigError("defense: quality must be in 1..100");
  if (rrp_canvas < 0) throw ConfigError("defense: canvas side must be >= 0");
  if (at_eps < 0.0 || at_eps > 1.0) throw ConfigError("defense: at_eps must be in [0,1]");
}

Tensor bdr(const Tensor& x, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("bdr: bits must be in 1..8");
  const double levels = static_cast<double>((1 << bits) - 1);
  Tensor out = x.clone();
  for (auto& v : out.vec()) {
    // round half up so e.g. 0.5 at 1 bit lands on 1.0
    const double q = std::floor(static_cast<double>(v) * levels + 0.5) / levels;
    v = static_cast<float>(std::clamp(q, 0.0, 1.0));
  }
  return out;
}

Tensor rrp(const Tensor& x, Rng& rng, int canvas, std::vector<RrpDraw>* draws) {
  check(x.rank() == 4, "rrp: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(H == W, "rrp: square images only");
  if (canvas <= 0) canvas = static_cast<int>(std::ceil(1.25 * W));
  check(canvas >= W, "rrp: canvas smaller than the image");

  Tensor out(Shape{N, C, canvas, canvas}, 0.0f);
  for (int n = 0; n < N; ++n) {
    RrpDraw d;
    d.side = W + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(canvas - W + 1)));
    d.oh = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d.side - W + 1)));
    d.ow = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d.side - W + 1)));
    if (draws) draws->push_back(d);
    for (int ci = 0; ci < C; ++ci) {
      const float* src = x.vec().data() +
                         (static_cast<std::size_t>(n) * C + ci) * H * W;
      float* dst = out.data() +
                   (static_cast<std::size_t>(n) * C + ci) * canvas * canvas;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          dst[(i + d.oh) * canvas + (j + d.ow)] = src[i * W + j];
    }
  }
  return out;
}

namespace {

struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_trap(j_common_ptr cinfo) {
  JpegErrorTrap* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, trap->message);
  std::longjmp(trap->jump, 1);
}

// encode+decode one interleaved 8-bit image in memory; returns false with
// `why` set on codec failure (no C++ objects live across the setjmp)
bool jpeg_roundtrip_u8(unsigned char* pixels, int H, int W, int C, int quality,
                       std::string* why) {
  JpegErrorTrap trap;
  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;

  jpeg_compress_struct enc;
  enc.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_trap;
  if (setjmp(trap.jump)) {
    *why = trap.message;
    jpeg_destroy_compress(&enc);
    if (encoded) std::free(encoded);
    return false;
  }
  jpeg_create_compress(&enc);
  jpeg_mem_dest(&enc, &encoded, &encoded_size);
  enc.image_width = static_cast<JDIMENSION>(W);
  enc.image_height = static_cast<JDIMENSION>(H);
  enc.input_components = C;
  enc.in_color_space = C == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&enc);
  jpeg_set_quality(&enc, quality, TRUE);
  // full-resolution chroma: on tiny images subsampling would dominate the
  // distortion and decouple it from the quality knob
  for (int ci = 0; ci < enc.num_components; ++ci) {
    enc.comp_info[ci].h_samp_factor = 1;
    enc.comp_info[ci].v_samp_factor = 1;
  }
  jpeg_start_compress(&enc, TRUE);
  while (enc.next_scanline < enc.image_height) {
    JSAMPROW row = pixels + static_cast<std::size_t>(enc.next_scanline) * W * C;
    jpeg_write_scanlines(&enc, &row, 1);
  }
  jpeg_finish_compress(&enc);
  jpeg_destroy_compress(&enc);

  jpeg_decompress_struct dec;
  dec.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_trap;  // std_error resets the hook
  if (setjmp(trap.jump)) {
    *why = trap.message;
    jpeg_destroy_decompress(&dec);
    std::free(encoded);
    return false;
  }
  jpeg_create_decompress(&dec);
  jpeg_mem_src(&dec, encoded, encoded_size);
  jpeg_read_header(&dec, TRUE);
  jpeg_start_decompress(&dec);
  if (static_cast<int>(dec.output_width) != W ||
      static_cast<int>(dec.output_height) != H ||
      dec.output_components != C) {
    *why = "decoded geometry mismatch";
    jpeg_destroy_decompress(&dec);
    std::free(encoded);
    return false;
  }
  while (dec.output_scanline < dec.output_height) {
    JSAMPROW row = pixels + static_cast<std::size_t>(dec.output_scanline) * W * C;
    jpeg_read_scanlines(&dec, &row, 1);
  }
  jpeg_finish_decompress(&dec);
  jpeg_destroy_decompress(&dec);
  std::free(encoded);
  return true;
}

}  // namespace

Tensor jc(const Tensor& x, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jc: quality must be in 1..100");
  check(x.rank() == 4, "jc: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(C == 3 || C == 1, "jc: supports 3-channel or 1-channel images");

  Tensor out = x.clone();
  std::vector<unsigned char> inter(static_cast<std::size_t>(H) * W * C);
  for (int n = 0; n < N; ++n) {
    float* image = out.data() + static_cast<std::size_t>(n) * C * H * W;
    for (int ci = 0; ci < C; ++ci)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const float v = image[(static_cast<std::size_t>(ci) * H + i) * W + j];
          const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
          inter[(static_cast<std::size_t>(i) * W + j) * C + ci] =
              static_cast<unsigned char>(std::floor(scaled + 0.5));
        }
    std::string why;
    if (!jpeg_roundtrip_u8(inter.data(), H, W, C, quality, &why))
      throw IoError("jc: codec failure: " + why);
    for (int ci = 0; ci < C; ++ci)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          image[(static_cast<std::size_t>(ci) * H + i) * W + j] =
              static_cast<float>(inter[(static_cast<std::size_t>(i) * W + j) * C + ci]) / 255.0f;
  }
  return out;
}

Preprocessor::Preprocessor(const DefenseSpec& spec)
    : spec_(spec), rng_(fold_seed(spec.seed, "preproc")) {
  spec_.validate();
  if (spec_.kind == DefenseKind::kAt)
    throw ConfigError("preprocessor: adversarial training is not a stream preprocessor");
}

Tensor Preprocessor::apply(const Tensor& x) {
  check(x.rank() == 4, "preprocessor: expected NCHW");
  ++invocations_;
  images_ += static_cast<std::uint64_t>(x.dim(0));
  switch (spec_.kind) {
    case DefenseKind::kNone: return x;
    case DefenseKind::kBdr: return bdr(x, spec_.bdr_bits);
    case DefenseKind::kRrp: return rrp(x, rng_, spec_.rrp_canvas);
    case DefenseKind::kJc: return jc(x, spec_.jc_quality);
    default: throw ConfigError("preprocessor: unsupported kind");
  }
}

double adversarial_train(Model& m, const LabeledDataset& train,
                         const TrainConfig& cfg, double eps_at,
                         int i_iter, int i_adv) {
  check(m.has_ssl(), "adversarial_train: model has no rotation branch");
  check(train.size() >= 2, "adversarial_train: dataset too small");
  check(cfg.epochs >= 1 && cfg.batch_size >= 2, "adversarial_train: bad epochs/batch size");
  check(eps_at >= 0.0 && eps_at <= 1.0, "adversarial_train: eps_at must be in [0,1]");

  AttackConfig atk = AttackConfig::for_method(TtaMethod::kTtt);
  atk.eps = eps_at;
  atk.i_iter = i_iter;
  atk.i_adv = i_adv;
  if (eps_at > 0.0)
    for (auto& s : atk.schedule) s.alpha = std::min(s.alpha, eps_at);
  atk.seed = fold_seed(cfg.seed, "at-inner");
  atk.validate();

  Sgd opt(cfg.lr, cfg.momentum);
  auto params = m.params_all();
  Rng rng(fold_seed(cfg.seed, "train"));
  std::uint64_t sample_salt = 0;
  double epoch_loss = 0.0;

  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<int> idx(static_cast<std::size_t>(train.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = train.size() - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    int batches = 0;
    epoch_loss = 0.0;
    for (int s = 0; s + 2 <= train.size(); s += cfg.batch_size) {
      const int e2 = std::min(train.size(), s + cfg.batch_size);
      if (e2 - s < 2) break;
      LabeledDataset mb = subset(train, std::vector<int>(idx.begin() + s, idx.begin() + e2));
      if (cfg.augment) mb.images = augment_flip_crop(mb.images, rng);

      // adversarial counterparts against the evolving model itself
      Tensor adv = mb.images.clone();
      const int B = mb.images.dim(0);
      const std::size_t per = mb.images.numel() / static_cast<std::size_t>(B);
      for (int n = 0; n < B; ++n) {
        LabeledDataset one = subset(mb, {n});
        Tensor xp = poigen(TtaMethod::kTtt, one.images, &m, atk, sample_salt++);
        std::copy(xp.vec().begin(), xp.vec().end(),
                  adv.vec().begin() + per * static_cast<std::size_t>(n));
      }

      Sgd::zero_grad(params);
      TapeF tape;
      Tensor l1 = ops::ce_loss(&tape, m.forward_main(&tape, mb.images, NormMode::kTrain), mb.labels);
      auto [rot, rot_labels] = rotation_batch(mb.images);
      Tensor l2 = ops::ce_loss(&tape, m.forward_ssl(&tape, rot, NormMode::kTrain), rot_labels);
      Tensor l3 = ops::ce_loss(&tape, m.forward_main(&tape, adv, NormMode::kTrain), mb.labels);
      auto [rot_adv, rot_adv_labels] = rotation_batch(adv);
      Tensor l4 = ops::ce_loss(&tape, m.forward_ssl(&tape, rot_adv, NormMode::kTrain), rot_adv_labels);
      Tensor loss = ops::add(&tape, ops::add(&tape, l1, l2), ops::add(&tape, l3, l4));
      tape.backward(loss);
      opt.step(params);
      epoch_loss += static_cast<double>(loss.item());
      ++batches;
    }
    check(batches > 0, "adversarial_train: no full batches");
    epoch_loss /= static_cast<double>(batches);
  }
  return epoch_loss;
}

}  // namespace ttalab
