#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace transrank {

using Rng = std::mt19937_64;

/// Independent stream keyed by a tuple of integers, e.g. (seed, epoch, video_id).
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2 + 1);
  words.push_back(static_cast<std::uint32_t>(keys.size()));
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Tags separating RNG streams that share the same numeric keys.
enum class Stream : std::uint64_t {
  kInit = 1,
  kData = 2,
  kEpochOrder = 3,
  kClip = 4,
  kEval = 5,
  kProbe = 6,
  kDropout = 7,
  kTransfer = 8,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace transrank
