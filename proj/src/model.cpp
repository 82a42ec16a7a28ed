#include "ttalab/model.hpp"

#include <sstream>

namespace ttalab {

std::string ArchSpec::serialize() const {
  std::ostringstream os;
  os << "kind=" << kind << ";widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ",";
    os << widths[i];
  }
  os << ";in_channels=" << in_channels << ";num_classes=" << num_classes
     << ";split_point=" << split_point << ";gn_groups=" << gn_groups
     << ";ssl_classes=" << ssl_classes;
  return os.str();
}

ArchSpec ArchSpec::deserialize(const std::string& s) {
  ArchSpec a;
  a.widths.clear();
  std::istringstream is(s);
  std::string field;
  while (std::getline(is, field, ';')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw IoError("arch descriptor: bad field '" + field + "'");
    std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "kind") {
      a.kind = val;
    } else if (key == "widths") {
      std::istringstream ws(val);
      std::string tok;
      while (std::getline(ws, tok, ',')) a.widths.push_back(std::stoi(tok));
    } else if (key == "in_channels") {
      a.in_channels = std::stoi(val);
    } else if (key == "num_classes") {
      a.num_classes = std::stoi(val);
    } else if (key == "split_point") {
      a.split_point = std::stoi(val);
    } else if (key == "gn_groups") {
      a.gn_groups = std::stoi(val);
    } else if (key == "ssl_classes") {
      a.ssl_classes = std::stoi(val);
    } else {
      throw IoError("arch descriptor: unknown field '" + key + "'");
    }
  }
  a.validate();
  return a;
}

void ArchSpec::validate() const {
  if (kind != "plain" && kind != "y")
    throw ConfigError("arch: kind must be 'plain' or 'y', got '" + kind + "'");
  if (widths.empty()) throw ConfigError("arch: widths must not be empty");
  for (int w : widths)
    if (w <= 0) throw ConfigError("arch: widths must be positive");
  if (num_classes < 2) throw ConfigError("arch: need at least 2 classes");
  if (in_channels <= 0) throw ConfigError("arch: in_channels must be positive");
  if (kind == "y") {
    const int n = static_cast<int>(widths.size());
    if (split_point < 1 || split_point > n)
      throw ConfigError("arch: split_point must be in [1," + std::to_string(n) +
                        "], got " + std::to_string(split_point));
    if (gn_groups < 1) throw ConfigError("arch: gn_groups must be positive");
  }
}

namespace {

int groups_for(int channels, int requested) {
  int g = std::min(requested, channels);
  while (channels % g != 0) --g;  // g=1 always divides
  return g;
}

Block make_block(int ci, int co, const ArchSpec& arch, Rng& rng) {
  Block b;
  b.conv.init(ci, co, /*stride=*/2, rng);
  if (arch.kind == "y")
    b.norm.init(NormKind::kGroupNorm, co, groups_for(co, arch.gn_groups));
  else
    b.norm.init(NormKind::kBatchNorm, co);
  return b;
}

void copy_params(std::vector<Param> dst, std::vector<Param> src) {
  check(dst.size() == src.size(), "parameter copy: partition size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    check(dst[i].tensor->numel() == src[i].tensor->numel(),
          "parameter copy: tensor size mismatch at " + dst[i].name);
    std::copy(src[i].tensor->data(), src[i].tensor->data() + src[i].tensor->numel(),
              dst[i].tensor->data());
  }
}

}  // namespace

Model::Model(const ArchSpec& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng rng(fold_seed(seed, "model-init"));
  int ci = arch_.in_channels;
  for (int w : arch_.widths) {
    blocks_.push_back(make_block(ci, w, arch_, rng));
    ci = w;
  }
  fc_main_.init(arch_.widths.back(), arch_.num_classes, rng);
  if (has_ssl()) {
    // The rotation branch duplicates the post-split main blocks, then gets a
    // fresh final layer of its own.
    const int n = static_cast<int>(blocks_.size());
    for (int i = arch_.split_point; i < n; ++i) {
      int in_c = (i == 0) ? arch_.in_channels : arch_.widths[static_cast<std::size_t>(i - 1)];
      ssl_blocks_.push_back(make_block(in_c, arch_.widths[static_cast<std::size_t>(i)], arch_, rng));
    }
    fc_ssl_.init(arch_.widths.back(), arch_.ssl_classes, rng);
    // parameter-wise copy of the main branch into the ssl branch
    std::vector<Param> src, dst;
    for (int i = arch_.split_point; i < n; ++i) {
      blocks_[static_cast<std::size_t>(i)].conv.collect(src, "m");
      blocks_[static_cast<std::size_t>(i)].norm.collect(src, "m");
    }
    for (auto& b : ssl_blocks_) {
      b.conv.collect(dst, "s");
      b.norm.collect(dst, "s");
    }
    copy_params(dst, src);
  }
}

Tensor Model::run_blocks(TapeF* tape, const Tensor& x, NormMode mode,
                         std::vector<Block>& blocks, int lo, int hi) {
  Tensor h = x;
  for (int i = lo; i < hi; ++i) {
    Block& b = blocks[static_cast<std::size_t>(i)];
    h = b.conv.forward(tape, h);
    h = b.norm.forward(tape, h, mode);
    h = ops::relu(tape, h);
  }
  return h;
}

Tensor Model::forward_main(TapeF* tape, const Tensor& x, NormMode mode) {
  ++forward_count_;
  Tensor h = run_blocks(tape, x, mode, blocks_, 0, static_cast<int>(blocks_.size()));
  h = ops::global_avg_pool(tape, h);
  return fc_main_.forward(tape, h);
}

Tensor Model::forward_ssl(TapeF* tape, const Tensor& x, NormMode mode) {
  if (!has_ssl())
    throw UnsupportedError("ssl forward requested on a model without a rotation branch");
  ++forward_count_;
  Tensor h = run_blocks(tape, x, mode, blocks_, 0, arch_.split_point);
  h = run_blocks(tape, h, mode, ssl_blocks_, 0, static_cast<int>(ssl_blocks_.size()));
  h = ops::global_avg_pool(tape, h);
  return fc_ssl_.forward(tape, h);
}

Tensor Model::forward_features(TapeF* tape, const Tensor& x, NormMode mode) {
  ++forward_count_;
  Tensor h = run_blocks(tape, x, mode, blocks_, 0, static_cast<int>(blocks_.size()));
  return ops::global_avg_pool(tape, h);
}

std::vector<Param> Model::params_all() {
  std::vector<Param> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].conv.collect(out, "block" + std::to_string(i) + ".conv");
    blocks_[i].norm.collect(out, "block" + std::to_string(i) + ".norm");
  }
  fc_main_.collect(out, "fc_main");
  for (std::size_t i = 0; i < ssl_blocks_.size(); ++i) {
    ssl_blocks_[i].conv.collect(out, "ssl_block" + std::to_string(i) + ".conv");
    ssl_blocks_[i].norm.collect(out, "ssl_block" + std::to_string(i) + ".norm");
  }
  if (has_ssl()) fc_ssl_.collect(out, "fc_ssl");
  return out;
}

std::vector<Param> Model::params_extractor() {
  check(has_ssl(), "extractor partition only defined for y models");
  std::vector<Param> out;
  for (int i = 0; i < arch_.split_point; ++i) {
    blocks_[static_cast<std::size_t>(i)].conv.collect(out, "block" + std::to_string(i) + ".conv");
    blocks_[static_cast<std::size_t>(i)].norm.collect(out, "block" + std::to_string(i) + ".norm");
  }
  return out;
}

std::vector<Param> Model::params_ssl_branch() {
  check(has_ssl(), "ssl partition only defined for y models");
  std::vector<Param> out;
  for (std::size_t i = 0; i < ssl_blocks_.size(); ++i) {
    ssl_blocks_[i].conv.collect(out, "ssl_block" + std::to_string(i) + ".conv");
    ssl_blocks_[i].norm.collect(out, "ssl_block" + std::to_string(i) + ".norm");
  }
  fc_ssl_.collect(out, "fc_ssl");
  return out;
}

std::vector<Param> Model::params_main_branch() {
  check(has_ssl(), "main-branch partition only defined for y models");
  std::vector<Param> out;
  const int n = static_cast<int>(blocks_.size());
  for (int i = arch_.split_point; i < n; ++i) {
    blocks_[static_cast<std::size_t>(i)].conv.collect(out, "block" + std::to_string(i) + ".conv");
    blocks_[static_cast<std::size_t>(i)].norm.collect(out, "block" + std::to_string(i) + ".norm");
  }
  fc_main_.collect(out, "fc_main");
  return out;
}

std::vector<Param> Model::params_norm_affine() {
  std::vector<Param> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].norm.collect(out, "block" + std::to_string(i) + ".norm");
  for (std::size_t i = 0; i < ssl_blocks_.size(); ++i)
    ssl_blocks_[i].norm.collect(out, "ssl_block" + std::to_string(i) + ".norm");
  return out;
}

std::vector<NormLayer*> Model::norm_layers() {
  std::vector<NormLayer*> out;
  for (auto& b : blocks_) out.push_back(&b.norm);
  for (auto& b : ssl_blocks_) out.push_back(&b.norm);
  return out;
}

std::vector<const NormLayer*> Model::norm_layers() const {
  std::vector<const NormLayer*> out;
  for (const auto& b : blocks_) out.push_back(&b.norm);
  for (const auto& b : ssl_blocks_) out.push_back(&b.norm);
  return out;
}

std::size_t Model::param_count() {
  std::size_t n = 0;
  for (const auto& p : params_all()) n += p.tensor->numel();
  return n;
}

std::uint64_t Model::partition_hash(const std::vector<Param>& params) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& p : params) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    h = fnv1a(p.tensor->data(), p.tensor->numel() * sizeof(Scalar), h);
  }
  return h;
}

std::uint64_t Model::state_hash() {
  std::uint64_t h = partition_hash(params_all());
  for (const NormLayer* nl : norm_layers()) {
    if (nl->kind == NormKind::kBatchNorm) {
      h = fnv1a(nl->running_mu.data(), nl->running_mu.size() * sizeof(double), h);
      h = fnv1a(nl->running_var.data(), nl->running_var.size() * sizeof(double), h);
      h = fnv1a(&nl->rho, sizeof(double), h);
    }
  }
  return h;
}

}  // namespace ttalab
