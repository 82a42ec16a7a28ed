#include "ttalab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ttalab {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'L', 'B'};

std::size_t dtype_size(std::uint8_t dtype) {
  switch (dtype) {
    case 0: return 4;
    case 1: return 8;
    case 2: return 8;
    case 3: return 1;
    default: throw IoError("checkpoint: unknown dtype " + std::to_string(dtype));
  }
}

template <typename T>
void append_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T read_le(const std::vector<unsigned char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IoError("checkpoint: truncated payload");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& s : sections_)
    if (s.first == name) return true;
  return false;
}

void Checkpoint::put(const std::string& name, std::uint8_t dtype,
                     const void* p, std::size_t bytes) {
  check(!has(name), "checkpoint: duplicate section '" + name + "'");
  Section s;
  s.dtype = dtype;
  s.bytes.resize(bytes);
  if (bytes) std::memcpy(s.bytes.data(), p, bytes);
  sections_.emplace_back(name, std::move(s));
}

void Checkpoint::put_f32(const std::string& name, const float* p, std::size_t n) {
  put(name, 0, p, n * 4);
}
void Checkpoint::put_f64(const std::string& name, const double* p, std::size_t n) {
  put(name, 1, p, n * 8);
}
void Checkpoint::put_i64(const std::string& name, const std::int64_t* p, std::size_t n) {
  put(name, 2, p, n * 8);
}
void Checkpoint::put_string(const std::string& name, const std::string& s) {
  put(name, 3, s.data(), s.size());
}

const Checkpoint::Section& Checkpoint::find(const std::string& name,
                                            std::uint8_t dtype) const {
  for (const auto& s : sections_)
    if (s.first == name) {
      if (s.second.dtype != dtype)
        throw IoError("checkpoint: section '" + name + "' has dtype " +
                      std::to_string(s.second.dtype) + ", expected " +
                      std::to_string(dtype));
      return s.second;
    }
  throw IoError("checkpoint: missing section '" + name + "'");
}

std::vector<float> Checkpoint::get_f32(const std::string& name) const {
  const Section& s = find(name, 0);
  std::vector<float> out(s.bytes.size() / 4);
  std::memcpy(out.data(), s.bytes.data(), s.bytes.size());
  return out;
}
std::vector<double> Checkpoint::get_f64(const std::string& name) const {
  const Section& s = find(name, 1);
  std::vector<double> out(s.bytes.size() / 8);
  std::memcpy(out.data(), s.bytes.data(), s.bytes.size());
  return out;
}
std::vector<std::int64_t> Checkpoint::get_i64(const std::string& name) const {
  const Section& s = find(name, 2);
  std::vector<std::int64_t> out(s.bytes.size() / 8);
  std::memcpy(out.data(), s.bytes.data(), s.bytes.size());
  return out;
}
std::string Checkpoint::get_string(const std::string& name) const {
  const Section& s = find(name, 3);
  return std::string(s.bytes.begin(), s.bytes.end());
}

std::vector<unsigned char> Checkpoint::to_bytes() const {
  std::vector<unsigned char> out;
  out.push_back(kVersion);
  out.insert(out.end(), kMagic, kMagic + 4);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, sec] : sections_) {
    check(name.size() <= 0xffff, "checkpoint: section name too long");
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(sec.dtype);
    append_le<std::uint64_t>(out, sec.bytes.size() / dtype_size(sec.dtype));
    out.insert(out.end(), sec.bytes.begin(), sec.bytes.end());
  }
  return out;
}

Checkpoint Checkpoint::from_bytes(const std::vector<unsigned char>& buf) {
  std::size_t pos = 0;
  if (buf.size() < 9) throw IoError("checkpoint: file too short");
  const std::uint8_t version = buf[pos++];
  if (version != kVersion)
    throw VersionError("checkpoint: format version " + std::to_string(version) +
                       " unsupported; this build reads version " +
                       std::to_string(kVersion));
  if (std::memcmp(buf.data() + pos, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic");
  pos += 4;
  const std::uint32_t count = read_le<std::uint32_t>(buf, pos);
  Checkpoint cp;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = read_le<std::uint16_t>(buf, pos);
    if (pos + name_len > buf.size()) throw IoError("checkpoint: truncated name");
    std::string name(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                     buf.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    if (pos >= buf.size()) throw IoError("checkpoint: truncated dtype");
    const std::uint8_t dtype = buf[pos++];
    const std::uint64_t n = read_le<std::uint64_t>(buf, pos);
    const std::size_t nbytes = static_cast<std::size_t>(n) * dtype_size(dtype);
    if (pos + nbytes > buf.size()) throw IoError("checkpoint: truncated section '" + name + "'");
    Section s;
    s.dtype = dtype;
    s.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                   buf.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
    pos += nbytes;
    check(!cp.has(name), "checkpoint: duplicate section '" + name + "'");
    cp.sections_.emplace_back(std::move(name), std::move(s));
  }
  if (pos != buf.size()) throw IoError("checkpoint: trailing bytes");
  return cp;
}

void Checkpoint::save_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  auto bytes = to_bytes();
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Checkpoint Checkpoint::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  return from_bytes(buf);
}

std::uint64_t Checkpoint::content_hash() const {
  auto b = to_bytes();
  return fnv1a(b.data(), b.size());
}

Checkpoint Checkpoint::capture(Model& m) {
  Checkpoint cp;
  cp.put_string("arch", m.arch().serialize());
  for (const auto& p : m.params_all())
    cp.put_f32("param." + p.name, p.tensor->data(), p.tensor->numel());
  auto norms = m.norm_layers();
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const NormLayer* nl = norms[i];
    if (nl->kind != NormKind::kBatchNorm) continue;
    const std::string p = "norm" + std::to_string(i);
    cp.put_f64(p + ".running_mu", nl->running_mu.data(), nl->running_mu.size());
    cp.put_f64(p + ".running_var", nl->running_var.data(), nl->running_var.size());
    const double rhoxi[2] = {nl->rho, nl->xi};
    cp.put_f64(p + ".rho_xi", rhoxi, 2);
  }
  return cp;
}

void Checkpoint::restore_into(Model& m) const {
  const std::string arch = get_string("arch");
  if (arch != m.arch().serialize())
    throw ContractError("checkpoint arch '" + arch + "' does not match model '" +
                        m.arch().serialize() + "'");
  for (const auto& p : m.params_all()) {
    auto v = get_f32("param." + p.name);
    check(v.size() == p.tensor->numel(),
          "checkpoint: size mismatch for param " + p.name);
    std::copy(v.begin(), v.end(), p.tensor->data());
  }
  auto norms = m.norm_layers();
  for (std::size_t i = 0; i < norms.size(); ++i) {
    NormLayer* nl = norms[i];
    if (nl->kind != NormKind::kBatchNorm) continue;
    const std::string p = "norm" + std::to_string(i);
    nl->running_mu = get_f64(p + ".running_mu");
    nl->running_var = get_f64(p + ".running_var");
    auto rhoxi = get_f64(p + ".rho_xi");
    check(rhoxi.size() == 2, "checkpoint: bad rho_xi section");
    nl->rho = rhoxi[0];
    nl->xi = rhoxi[1];
    check(nl->running_mu.size() == static_cast<std::size_t>(nl->channels()),
          "checkpoint: running stat size mismatch");
  }
}

Model Checkpoint::build_model() const {
  ArchSpec arch = ArchSpec::deserialize(get_string("arch"));
  Model m(arch, /*seed=*/0);
  restore_into(m);
  return m;
}

}  // namespace ttalab
