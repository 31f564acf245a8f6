#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pegnn {

using Rng = std::mt19937_64;

/// Stream tags that keep independent random consumers on disjoint keys.
enum class Stream : std::uint64_t {
  kDatasetTrain = 1,
  kDatasetVal = 2,
  kDatasetTest = 3,
  kInit = 4,
  kShuffle = 5,
  kNoiseTrain = 6,
  kNoiseVal = 7,
  kNoiseEval = 8,
  kMember = 9,
  kProbe = 10,
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Counter-based key derivation: the result depends only on the base seed and
/// the ordered key tuple, never on how many values were drawn elsewhere.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                 std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t s = derive_seed(base, {static_cast<std::uint64_t>(stream)});
  return keys.size() == 0 ? s : derive_seed(s, keys);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Standard normal variate via the polar method. Hand-rolled so that draws are
/// identical across standard library implementations.
double standard_normal(Rng& rng);

/// Uniform real in [lo, hi) built from the top 53 bits of one engine output.
double uniform_real(Rng& rng, double lo, double hi);

}  // namespace pegnn
