#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ttalab {

// All library errors carry a category string so the CLI can map them to
// stable exit codes without string-matching free-form messages.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& msg)
      : std::runtime_error(msg), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

// Bad user-facing configuration: unknown keys, out-of-range values, schema
// version mismatch, missing required fields.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// Missing or unreadable files, malformed binary payloads.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

// File exists but its format version is not the one this build writes.
class VersionError : public Error {
 public:
  explicit VersionError(const std::string& msg) : Error("version", msg) {}
};

// A runtime precondition failed: shape mismatch, non-scalar backward root,
// gradient requested for a detached tensor, and similar contract breaches.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

// Batch statistics requested over a batch too small to define them.
class DegenerateBatchError : public Error {
 public:
  explicit DegenerateBatchError(const std::string& msg)
      : Error("degenerate-batch", msg) {}
};

// Operation not defined for this object (e.g. SSL forward on a plain model).
class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& msg)
      : Error("unsupported", msg) {}
};

// A required upstream artifact (checkpoint, poison cache) is absent.
class DependencyError : public Error {
 public:
  explicit DependencyError(const std::string& msg)
      : Error("dependency", msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// FNV-1a, used for frozen-parameter-partition hashing and output file hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace ttalab
