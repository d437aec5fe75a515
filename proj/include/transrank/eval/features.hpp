#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "transrank/model/model.hpp"
#include "transrank/synthdata/dataset.hpp"
#include "transrank/transforms/temporal.hpp"

namespace transrank::eval {

struct EvalConfig {
  std::size_t clips = 10;  // clips averaged per video
  double crop = 0.875;     // center crop side, fraction of the frame
  std::vector<TemporalTransform> probe_rates{TemporalTransform::speed(0.5), TemporalTransform::speed(1),
                                             TemporalTransform::speed(2), TemporalTransform::speed(4)};
  std::size_t speediness_clips = 4;  // per test video, shared by every probe rate
  std::size_t probe_hidden = 64;
  std::size_t probe_epochs = 60;
  double probe_lr = 0.05;
  std::size_t probe_batch = 32;
  std::size_t sync_windows = 2;   // anchor windows per video, each yields all seven patterns
  std::size_t order_windows = 2;  // windows per video, each yields both orders
  std::size_t order_gap_min = 8;  // frames skipped between the two sub-clips
  std::size_t order_gap_max = 32;

  void validate() const;
};

/// Gathers the frames, center-crops to the encoder's frame size and centers
/// the values, i.e. the evaluation-time counterpart of training augmentation.
Tensor eval_clip(const FrameVolume& video, std::span<const std::size_t> indices, double crop,
                 std::size_t frame_size);

/// Per-clip encoder features: videos × clips × D.
struct ClipFeatures {
  Tensor features;
  std::vector<int> labels;
};

/// `clips` 1x clips per video at stratified offsets, jitter 1. Offsets come
/// from the stream (seed, eval, video id), so results do not depend on `workers`.
ClipFeatures extract_clip_features(Encoder& encoder, const Dataset& data, const EvalConfig& cfg,
                                   std::uint64_t seed, std::size_t workers = 1);

/// One averaged D-vector per video.
struct FeatureBank {
  Tensor features;  // videos × D
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

FeatureBank average_clips(const ClipFeatures& clips);

FeatureBank build_feature_bank(Encoder& encoder, const Dataset& data, const EvalConfig& cfg,
                               std::uint64_t seed, std::size_t workers = 1);

/// Copies the listed rows of a matrix.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Per-column affine standardization fitted on the rows of a training matrix.
/// Constant columns keep unit scale.
struct Standardizer {
  std::vector<float> mean;
  std::vector<float> scale;

  static Standardizer fit(const Tensor& rows);
  Tensor apply(const Tensor& rows) const;
};

}  // namespace transrank::eval
