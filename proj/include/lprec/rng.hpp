// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lprec {

// Counter-based deterministic PRNG (splitmix64 finalizer over a per-stream
// base plus a golden-ratio-stepped counter).  Pure 64-bit integer arithmetic:
// the same (seed, stream_id) produces the same sequence on every platform.
// Distinct stream_ids decorrelate through the avalanche mixer, so one logical
// stream per (seed, arm, tensor, purpose) keeps experiment arms isolated.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id)
      : seed_(seed),
        stream_id_(stream_id),
        base_(mix64(seed + kGolden) ^ mix64(stream_id ^ 0xD1B54A32D192ED03ull)),
        counter_(0) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64() { return mix64(base_ + kGolden * ++counter_); }

  // uniform in [0, 1), 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n); n must be nonzero.  Widening-multiply range
  // reduction: deterministic, bias below 2^-32 for the n used here.
  uint64_t uniform_below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller; consumes exactly two uniform draws per
  // call (no caching, so the draw count stays predictable).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log1p(-u1));  // u1 < 1 always
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  static constexpr uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

 private:
  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t base_;
  uint64_t counter_;
};

// FNV-1a over a label, for naming streams ("sample-index", "round/w", ...).
constexpr uint64_t stream_id_from(std::string_view label) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace lprec
