#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ttalab/common.hpp"

namespace ttalab {

// Flat key=value experiment configuration. Lines are `key = value`, blank
// lines and `#` comments are skipped, and every file must carry an explicit
// `schema = 1` so stale configs fail loudly instead of being misread.
struct KvConfig {
  int schema = 1;
  std::map<std::string, std::string> values;

  static KvConfig parse_text(const std::string& text, const std::string& origin);
  static KvConfig parse_file(const std::string& path);

  // `key=value` command-line override; later overrides win.
  void apply_override(const std::string& kv);

  bool has(const std::string& key) const { return values.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Canonical sorted rendering; parse_text(render()) reproduces the config.
  std::string render() const;
};

}  // namespace ttalab
