#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace poserank {

// SplitMix64 output function (public-domain constants).  Pure: maps x to a
// well-mixed 64-bit value.  Used only to derive substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic substream seed from a root seed plus role tags, e.g.
// seed_stream(seed, {kStreamSample, category, index}).  Different tag tuples
// give statistically independent streams, so any sample/batch can be
// regenerated in isolation without replaying the whole sequence.
inline std::uint64_t seed_stream(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t t : tags) h = splitmix64(h ^ (t + 0x9e3779b97f4a7c15ULL));
  return h;
}

// Stream role tags (arbitrary distinct constants).
inline constexpr std::uint64_t kStreamSample = 0x01;  // dataset sample generation
inline constexpr std::uint64_t kStreamBatch = 0x02;   // per-step batch composition
inline constexpr std::uint64_t kStreamAugment = 0x03; // per-step per-slot augmentation
inline constexpr std::uint64_t kStreamInit = 0x04;    // parameter initialization
inline constexpr std::uint64_t kStreamEval = 0x05;    // evaluation pair/triple sampling
inline constexpr std::uint64_t kStreamIoU = 0x06;     // per-pair IoU Monte Carlo

// Deterministic RNG wrapper.  mt19937_64's output sequence is fixed by the
// C++ standard, so streams are bit-portable; the uniform/normal conversions
// below are spelled out (instead of std::uniform_real_distribution etc.)
// because the std distributions are implementation-defined and would break
// byte-identical reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
      : gen_(seed_stream(seed, tags)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via rejection.
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % un;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::int64_t>(x % un);
  }

  // Standard normal via Box-Muller (cosine branch).  Consumes exactly two
  // uniforms per call; no cached second value, so the stream position is a
  // simple function of the call count.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

// First k entries of a Fisher-Yates pass over [0, n): k distinct indices,
// uniformly distributed, in O(n) memory and O(k) draws.
inline std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (k > n) k = n;
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_int(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace poserank
