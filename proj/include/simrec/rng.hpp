#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "simrec/error.hpp"

namespace simrec {

// Deterministic PRNG: PCG32 (O'Neill's pcg32, the XSH-RR 64/32 member of the
// PCG family). 64-bit LCG state, 32-bit output. Chosen because the algorithm
// is fully specified and platform independent, unlike the standard library
// distributions, so every stochastic choice in this project is reproducible
// bit-exactly from (seed, stream label).
//
// Independent streams are selected by hashing a stream label (FNV-1a) into
// the LCG increment, which is the PCG stream-selection mechanism. The same
// seed with distinct labels yields statistically independent sequences.
class Rng {
 public:
  Rng() : Rng(0, "default") {}

  Rng(std::uint64_t seed, std::string_view stream_label) {
    const std::uint64_t inc = stream_id(stream_label);
    state_ = 0;
    inc_ = (inc << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  // Restores a previously serialized generator.
  static Rng from_state(std::uint64_t state, std::uint64_t inc) {
    Rng r;
    r.state_ = state;
    r.inc_ = inc;
    return r;
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t inc() const { return inc_; }

  // FNV-1a 64-bit hash of the stream label.
  static std::uint64_t stream_id(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : label) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    const std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() {
    const std::uint64_t a = next_u32() >> 5;   // 27 bits
    const std::uint64_t b = next_u32() >> 6;   // 26 bits
    return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) *
           (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw Error("uniform_int: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n) excluding `exclude`. Rejection sampling for
  // small k, shuffle of the full candidate list when k is a large fraction.
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::size_t k,
                                                        std::uint32_t exclude) {
    const std::size_t available = (exclude < n) ? n - 1 : n;
    if (k > available) throw Error("sample_without_replacement: k exceeds population");
    std::vector<std::uint32_t> out;
    out.reserve(k);
    if (2 * k >= available) {
      for (std::uint32_t v = 0; v < n; ++v)
        if (v != exclude) out.push_back(v);
      shuffle(out);
      out.resize(k);
      return out;
    }
    std::vector<bool> taken(n, false);
    while (out.size() < k) {
      const auto v = static_cast<std::uint32_t>(uniform_int(n));
      if (v == exclude || taken[v]) continue;
      taken[v] = true;
      out.push_back(v);
    }
    return out;
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
};

}  // namespace simrec
