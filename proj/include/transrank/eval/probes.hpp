#pragma once

#include <cstdint>

#include "transrank/eval/features.hpp"

namespace transrank::eval {

/// Overlap patterns of the Sync probe: b is shifted by −(k − 3)/4 clip
/// lengths relative to a, so class 0 (−3/4) means a is ahead of b.
inline constexpr int kSyncPatterns = 7;
double sync_shift_fraction(int pattern);

/// Frozen features with labels, one row per probe example.
struct ProbeData {
  Tensor features;  // rows × probe_dim
  std::vector<int> labels;
};

/// Sync: ψ(a) − ψ(b) on the stage-3 probe feature for every pattern of
/// `sync_windows` anchor windows per video.
ProbeData sync_probe_data(Encoder& encoder, const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                          std::size_t workers = 1);

/// Order: two 8-frame sub-clips x1 before x2, separated by a gap drawn from
/// [order_gap_min, order_gap_max]; (x1, x2) is "before" (0) and (x2, x1) is
/// "after" (1). Both orders of every window are emitted, so labels are balanced.
ProbeData order_probe_data(Encoder& encoder, const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                           std::size_t workers = 1);

/// Trains a two-layer perceptron on standardized train features and returns
/// the test accuracy. Encoder parameters are never touched.
double train_probe(const ProbeData& train, const ProbeData& test, std::size_t classes, const EvalConfig& cfg,
                   std::uint64_t seed);

double temporal_probe_sync(Encoder& encoder, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                           std::uint64_t seed, std::size_t workers = 1);
double temporal_probe_order(Encoder& encoder, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                            std::uint64_t seed, std::size_t workers = 1);

}  // namespace transrank::eval
