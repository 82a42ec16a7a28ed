#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ttalab/model.hpp"

namespace ttalab {

// Versioned binary container of named sections. Layout (all integers
// little-endian):
//   byte 0      format version (current: 1)
//   bytes 1..4  magic "TTLB"
//   u32         section count
//   sections    u16 name length, name bytes, u8 dtype, u64 element count,
//               raw element payload
// dtypes: 0 = f32, 1 = f64, 2 = i64, 3 = raw bytes (strings).
// A file whose version byte differs from kVersion is refused outright.
class Checkpoint {
 public:
  static constexpr std::uint8_t kVersion = 1;

  struct Section {
    std::uint8_t dtype;
    std::vector<unsigned char> bytes;
  };

  bool has(const std::string& name) const;

  void put_f32(const std::string& name, const float* p, std::size_t n);
  void put_f64(const std::string& name, const double* p, std::size_t n);
  void put_i64(const std::string& name, const std::int64_t* p, std::size_t n);
  void put_string(const std::string& name, const std::string& s);

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  std::vector<unsigned char> to_bytes() const;
  static Checkpoint from_bytes(const std::vector<unsigned char>& buf);

  void save_file(const std::string& path) const;
  static Checkpoint load_file(const std::string& path);

  std::uint64_t content_hash() const;
  const std::vector<std::pair<std::string, Section>>& sections() const {
    return sections_;
  }

  // Model state <-> sections. capture stores the arch descriptor, every named
  // parameter, and per-layer normalization state (running stats and the
  // streaming-momentum scalars). restore_into requires an identical arch;
  // build_model reconstructs a model from scratch.
  static Checkpoint capture(Model& m);
  void restore_into(Model& m) const;
  Model build_model() const;

 private:
  const Section& find(const std::string& name, std::uint8_t dtype) const;
  void put(const std::string& name, std::uint8_t dtype,
           const void* p, std::size_t bytes);

  std::vector<std::pair<std::string, Section>> sections_;
};

}  // namespace ttalab
