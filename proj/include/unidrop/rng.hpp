#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace unidrop {

// Counter-based random stream built on the SplitMix64 output function.
//
// The n-th raw draw of a stream is
//
//   u64(n) = mix(key + (n + 1) * 0x9E3779B97F4A7C15)
//
// where mix is the SplitMix64 finalizer
//
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
//
// and key = mix(seed ^ mix(fnv1a64(stream_name))). A (seed, stream name,
// draw index) triple therefore identifies a value independent of platform,
// and distinct stream names give decorrelated sequences from one seed.
//
// Stream names used by the library: "weights", "feature-masks",
// "layer-masks", "data-masks", "data-shuffle".
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_name);

  std::uint64_t next_u64();

  // Uniform on [0, 1) using the top 53 bits of one draw.
  double uniform();

  // Standard normal via Box-Muller; consumes two draws per value.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n); n must be > 0. Lemire multiply-shift with
  // rejection, so the distribution is exact.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_name() const { return name_; }
  std::uint64_t draws_consumed() const { return counter_; }

  static std::uint64_t mix(std::uint64_t z);
  static std::uint64_t fnv1a64(std::string_view s);

 private:
  std::uint64_t seed_;
  std::string name_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace unidrop
