#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "transrank/numerics/random.hpp"

namespace transrank {

enum class TemporalKind { Speed, Reverse, Palindrome, Shuffle };

/// One temporal transformation: playback rate n on a base frame interval b.
/// Shuffle keeps n only for bookkeeping; it always permutes the 1× sequence.
struct TemporalTransform {
  TemporalKind kind = TemporalKind::Speed;
  double rate = 1.0;
  int base_interval = 2;

  static TemporalTransform speed(double n) { return {TemporalKind::Speed, n, 2}; }
  static TemporalTransform reverse(double n = 1.0) { return {TemporalKind::Reverse, n, 2}; }
  static TemporalTransform palindrome(double n = 1.0) { return {TemporalKind::Palindrome, n, 2}; }
  static TemporalTransform shuffle() { return {TemporalKind::Shuffle, 1.0, 2}; }

  /// Short label: 1x, 2x, 0.5x, rev, rev2x, palindrome, shuffle.
  std::string label() const;

  /// Rate that actually stretches the index span (1 for Shuffle).
  double effective_rate() const { return kind == TemporalKind::Shuffle ? 1.0 : rate; }

  bool operator==(const TemporalTransform&) const = default;
};

/// Inverse of TemporalTransform::label. Throws std::invalid_argument.
TemporalTransform parse_transform(std::string_view token);

/// Comma-separated list, e.g. "1x,2x,rev".
std::vector<TemporalTransform> parse_transform_list(std::string_view list);
std::string format_transform_list(std::span<const TemporalTransform> set);

struct ClipSpec {
  std::size_t video_length = 0;
  std::size_t clip_length = 16;
  std::size_t offset = 0;
  double jitter = 1.0;
  TemporalTransform transform;
};

/// The requested clip does not fit inside the video; the caller re-draws.
class ClipRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// The video cannot hold the most stretched transform of a set.
class VideoTooShortError : public std::runtime_error {
 public:
  VideoTooShortError(std::size_t required, std::size_t actual);
  std::size_t required_length;
};

/// Largest index offset from ρ produced by `t` at jitter j: round((l−1)·b·n·j).
std::size_t max_index_offset(const TemporalTransform& t, std::size_t clip_length, double jitter);

/// Frames a clip can touch in the worst case over a set: max offset at
/// `max_jitter` plus one.
std::size_t required_span(std::span<const TemporalTransform> set, std::size_t clip_length,
                          double max_jitter = 1.2);

/// Frame indices of one clip. `rng` is only consulted for Shuffle.
std::vector<std::size_t> index_sequence(const ClipSpec& spec, Rng* rng = nullptr);

/// Stratified offsets: clip i is drawn uniformly inside the i-th of `count`
/// equal segments of the valid offset range [0, video_length − span].
std::vector<std::size_t> sample_offsets(std::size_t video_length, std::size_t clip_length,
                                        std::span<const TemporalTransform> set, std::size_t count,
                                        Rng& rng, double max_jitter = 1.2);

/// Interval jitter, uniform in [lo, hi].
double jitter_factor(Rng& rng, double lo = 0.8, double hi = 1.2);

}  // namespace transrank
