#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transrank/eval/features.hpp"

namespace transrank::eval {

struct SpeedinessRecord {
  TemporalTransform transform;  // probe rate applied to the clip
  std::uint64_t video_id = 0;
  double raw = 0;         // s_2x − s_1x
  double normalized = 0;
};

/// x ↦ (x − shift) / scale.
struct AffineMap {
  double shift = 0;
  double scale = 1;
  double operator()(double x) const { return (x - shift) / scale; }
};

/// Mean 1x and 2x raw values, mapped to 0 and 1. Throws std::domain_error if
/// either population is empty or the two means are equal.
AffineMap fit_speediness_map(std::span<const SpeedinessRecord> records);

/// Refits the map on `records` and rewrites every normalized value.
void normalize_speediness(std::span<SpeedinessRecord> records);

/// Linear interpolation between closest ranks (Hyndman-Fan type 7).
double quantile(std::vector<double> values, double p);

struct QuantileRow {
  std::string rate;
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
};

/// Normalized-score quantiles per probe rate, in the order of `rates`.
std::vector<QuantileRow> summarize_speediness(std::span<const SpeedinessRecord> records,
                                              std::span<const TemporalTransform> rates);

/// Scores `speediness_clips` clips per test video at every probe rate. All
/// rates share the clip offsets of a video. `trained` is the transform set the
/// model's temporal head was trained on and must be exactly {1x, 2x}.
std::vector<SpeedinessRecord> speediness(VideoModel& model, std::span<const TemporalTransform> trained,
                                         const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                                         std::size_t workers = 1);

}  // namespace transrank::eval
