#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transrank/numerics/random.hpp"
#include "transrank/numerics/tensor.hpp"

namespace transrank {

/// 8-bit C×T×H×W frame volume, the storage form of a video.
struct FrameVolume {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  std::size_t frame_area() const { return height * width; }
  std::uint8_t at(std::size_t c, std::size_t t, std::size_t y, std::size_t x) const {
    return data[((c * length + t) * height + y) * width + x];
  }
  bool operator==(const FrameVolume&) const = default;
};

/// Gathers frames into a float C×l×H×W clip scaled to [0, 1].
Tensor gather_clip(const FrameVolume& video, std::span<const std::size_t> indices);

struct Interval {
  double lo = 0;
  double hi = 0;
  bool operator==(const Interval&) const = default;
};

struct SpatialAugConfig {
  Interval crop_area{0.4, 1.0};     // fraction of the frame area
  Interval crop_aspect{0.5, 2.0};   // width / height of the source region
  double grayscale_prob = 0.2;
  Interval gain{0.8, 1.2};
  Interval bias{-0.1, 0.1};         // fraction of value_range
  double value_range = 1.0;
  std::vector<int> rotations{0};    // quarter turns to draw from
  std::size_t out_size = 32;

  /// Crop/resize and nothing else: no color change, no rotation.
  static SpatialAugConfig crop_only();
  /// Every range collapsed so the output equals an out_size×out_size input.
  static SpatialAugConfig identity(std::size_t height, std::size_t width);

  void validate() const;
};

struct AugmentedClip {
  Tensor clip;
  double aspect_ratio = 1.0;  // width / height of the sampled source region
  int rotation = 0;           // quarter turns applied
};

/// One clip-wise augmentation: the same crop, color change and rotation on
/// every frame of the clip.
AugmentedClip spatial_augment(const Tensor& clip, const SpatialAugConfig& cfg, Rng& rng);

/// Crops the region (x0, y0, w, h) of every frame and resamples it
/// bilinearly to out_h × out_w.
Tensor crop_resize(const Tensor& clip, double x0, double y0, double w, double h,
                   std::size_t out_h, std::size_t out_w);

/// Centered square crop with side `side_fraction` of the shorter edge.
Tensor center_crop(const Tensor& clip, double side_fraction, std::size_t out_size);

/// Mid-gray of the [0, 1] value range, subtracted before clips reach the encoder.
inline constexpr float kPixelMean = 0.5f;
void center_values(Tensor& clip, float mean = kPixelMean);

/// Rotates every frame by k quarter turns counter-clockwise (square frames only).
Tensor rotate90(const Tensor& clip, int quarter_turns);

}  // namespace transrank
