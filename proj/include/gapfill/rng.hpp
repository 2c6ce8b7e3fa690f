#pragma once

// Counter-based random streams and platform-independent trig helpers.
//
// Every draw is a pure function of (key, index), so masks and synthetic
// fields do not depend on iteration order or thread count.

#include <cstdint>
#include <initializer_list>

namespace gapfill::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Hash a sequence of words into one key.
constexpr std::uint64_t key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto w : words) h = splitmix64(h ^ splitmix64(w + 0x243F6A8885A308D3ULL));
  return h;
}

/// Uniform double in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

class Stream {
 public:
  constexpr explicit Stream(std::uint64_t key) : key_(key) {}

  /// Raw draw at an explicit counter position; does not advance the stream.
  constexpr std::uint64_t at(std::uint64_t index) const {
    return splitmix64(key_ ^ splitmix64(index));
  }
  constexpr double uniform_at(std::uint64_t index) const { return to_unit(at(index)); }

  std::uint64_t next() { return at(counter_++); }
  double uniform() { return to_unit(next()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer uniform in [lo, hi] (inclusive).
  long long uniform_int(long long lo, long long hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    // 128-bit multiply-shift; bias is below 2^-64 * span.
    const auto prod = static_cast<unsigned __int128>(next()) * span;
    return lo + static_cast<long long>(prod >> 64);
  }
  /// Standard normal via Box-Muller using the deterministic log/cos below.
  double normal();

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Deterministic elementary functions built from +,-,*,/ only. Used wherever
// generated geometry must be identical across platforms and libm versions.
double det_sin(double x);
double det_cos(double x);
double det_exp(double x);
double det_log(double x);

}  // namespace gapfill::rng
