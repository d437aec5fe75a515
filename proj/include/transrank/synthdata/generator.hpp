#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "transrank/transforms/spatial.hpp"

namespace transrank {

enum class MotionCategory : int { Linear = 0, Circular = 1, Oscillatory = 2, RandomWalk = 3 };
enum class SpriteShape : int { Square = 0, Disc = 1, Triangle = 2 };

inline constexpr int kMotionCategories = 4;

std::string_view category_name(MotionCategory c);
std::string_view sprite_name(SpriteShape s);

struct Point {
  double x = 0;
  double y = 0;
};

struct GeneratorParams {
  std::size_t frames = 200;
  std::size_t size = 64;
  double speed_min = 0.5;
  double speed_max = 2.0;
  std::size_t sprite_min = 8;
  std::size_t sprite_max = 12;
  double background_mean = 90;
  double noise_sigma = 12;
  double sprite_level = 235;
  // Oscillation period in frames; the amplitude follows from the speed.
  double oscillation_period = 32;
  // Turning noise of the random walk, radians per frame.
  double walk_turn_sigma = 0.25;
  // Fading trail behind the sprite: it gives each frame a direction of time.
  std::size_t trail_length = 4;
  double trail_decay = 0.55;

  void validate() const;
};

struct SyntheticVideo {
  std::uint64_t id = 0;
  MotionCategory category = MotionCategory::Linear;
  SpriteShape sprite = SpriteShape::Square;
  std::size_t sprite_size = 0;
  double speed = 0;             // pixels per frame
  std::vector<Point> path;      // sprite center per frame
  std::vector<double> travel;   // cumulative path length per frame
  FrameVolume frames;
};

/// Deterministic per (seed, id). The category cycles with the id.
SyntheticVideo generate_video(std::uint64_t seed, std::uint64_t id, const GeneratorParams& params = {});

/// Only the center trajectory, for tests that do not need pixels.
SyntheticVideo generate_trajectory(std::uint64_t seed, std::uint64_t id,
                                   const GeneratorParams& params = {});

}  // namespace transrank
