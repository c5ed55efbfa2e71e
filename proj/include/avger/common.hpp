#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avger {

/// Error while reading a structured text file (manifest, hypothesis list,
/// tokenizer, config). Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = -1)
      : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

uint64_t splitmix64(uint64_t x);

/// Derive a sub-seed from a base seed and a purpose tag, so independent
/// random streams never collide.
uint64_t derive_seed(uint64_t base, std::string_view tag);
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index);

/// Seeded RNG with self-contained distributions. std:: distributions are
/// implementation-defined; these are not, so streams are stable across
/// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[size_t(uniform_int(0, int(i) - 1))]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace avger
