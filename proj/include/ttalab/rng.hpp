#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

#include "ttalab/common.hpp"

namespace ttalab {

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact by the
// standard); the distribution mappings are implemented here because the
// standard leaves std::*_distribution algorithms unspecified and we need
// identical draws from identical seeds on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
  // the desk-scale ranges used here, but rejection keeps draws exact.
  std::uint64_t uniform_int(std::uint64_t n) {
    check(n > 0, "uniform_int: n must be positive");
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = bits();
    } while (v >= limit);
    return v % n;
  }

  // Integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    check(hi >= lo, "uniform_int: empty range");
    return lo + static_cast<std::int64_t>(
                    uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one draw per call, the pair partner is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Derive an independent child stream; used to give each image / event /
  // worker its own stream without coupling draw counts.
  Rng child(std::uint64_t salt) {
    std::uint64_t s = bits() ^ (salt * 0x9e3779b97f4a7c15ull + 0x243f6a8885a308d3ull);
    return Rng(s);
  }

  std::string serialize() const {
    std::ostringstream os;
    // the spare normal is stored as raw bits so the round trip is exact
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << eng_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int hs = 0;
    std::uint64_t bits = 0;
    is >> eng_ >> hs >> bits;
    if (!is) throw IoError("rng state parse failed");
    std::memcpy(&spare_, &bits, sizeof(bits));
    has_spare_ = hs != 0;
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream derivation: fold a label into a seed. Used so that e.g.
// (dataset seed, image index) or (experiment seed, "schedule") name disjoint
// streams reproducibly.
inline std::uint64_t fold_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline std::uint64_t fold_seed(std::uint64_t seed, const std::string& label) {
  return fold_seed(seed, fnv1a(label.data(), label.size()));
}

}  // namespace ttalab
