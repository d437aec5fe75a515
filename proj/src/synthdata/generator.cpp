#include "transrank/synthdata/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "transrank/numerics/random.hpp"

namespace transrank {

namespace {

constexpr double kPi = std::numbers::pi;

// Folds a coordinate into [lo, hi] as if it bounced off both walls.
double reflect(double v, double lo, double hi) {
  const double width = hi - lo;
  double u = std::fmod(v - lo, 2 * width);
  if (u < 0) u += 2 * width;
  return lo + (u <= width ? u : 2 * width - u);
}

struct Bounds {
  double lo;
  double hi;
};

Bounds center_bounds(const GeneratorParams& p, std::size_t sprite) {
  const double margin = static_cast<double>(sprite) / 2.0 + 1.0;
  return {margin, static_cast<double>(p.size) - 1.0 - margin};
}

std::vector<Point> linear_path(const GeneratorParams& p, Bounds b, double v, Rng& rng) {
  std::uniform_real_distribution<double> pos(b.lo, b.hi), ang(0, 2 * kPi);
  const Point start{pos(rng), pos(rng)};
  const double a = ang(rng);
  std::vector<Point> path(p.frames);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double s = v * static_cast<double>(t);
    path[t] = {reflect(start.x + s * std::cos(a), b.lo, b.hi), reflect(start.y + s * std::sin(a), b.lo, b.hi)};
  }
  return path;
}

std::vector<Point> circular_path(const GeneratorParams& p, Bounds b, double v, Rng& rng) {
  const double room = (b.hi - b.lo) / 2.0;
  std::uniform_real_distribution<double> radius(std::min(8.0, room * 0.5), room * 0.9);
  const double r = radius(rng);
  std::uniform_real_distribution<double> cx(b.lo + r, b.hi - r), ang(0, 2 * kPi);
  const Point c{cx(rng), cx(rng)};
  const double phase = ang(rng);
  const double dir = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  std::vector<Point> path(p.frames);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double a = phase + dir * v * static_cast<double>(t) / r;
    path[t] = {c.x + r * std::cos(a), c.y + r * std::sin(a)};
  }
  return path;
}

// Sinusoid along a direction kept within 60 degrees of the x axis, so the x
// coordinate carries the full oscillation frequency. The amplitude gives a
// mean speed of v: mean |d/dt A sin(wt)| = 4A / period.
std::vector<Point> oscillatory_path(const GeneratorParams& p, Bounds b, double v, Rng& rng) {
  const double amp = v * p.oscillation_period / 4.0;
  std::uniform_real_distribution<double> tilt(-kPi / 3, kPi / 3), ang(0, 2 * kPi);
  const double a = tilt(rng) + (std::bernoulli_distribution(0.5)(rng) ? kPi : 0.0);
  const double ax = amp * std::abs(std::cos(a)), ay = amp * std::abs(std::sin(a));
  const double sx = std::cos(a) < 0 ? -1.0 : 1.0, sy = std::sin(a) < 0 ? -1.0 : 1.0;
  if (2 * ax > b.hi - b.lo || 2 * ay > b.hi - b.lo) {
    throw std::invalid_argument("oscillation amplitude does not fit in the frame");
  }
  std::uniform_real_distribution<double> cx(b.lo + ax, b.hi - ax), cy(b.lo + ay, b.hi - ay);
  const Point c{cx(rng), cy(rng)};
  const double phase = ang(rng);
  std::vector<Point> path(p.frames);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double s = std::sin(2 * kPi * static_cast<double>(t) / p.oscillation_period + phase);
    path[t] = {c.x + sx * ax * s, c.y + sy * ay * s};
  }
  return path;
}

// Constant step length v, heading perturbed every frame, reflected at walls.
std::vector<Point> walk_path(const GeneratorParams& p, Bounds b, double v, Rng& rng) {
  std::uniform_real_distribution<double> pos(b.lo, b.hi), ang(0, 2 * kPi);
  std::normal_distribution<double> turn(0.0, p.walk_turn_sigma);
  double x = pos(rng), y = pos(rng), a = ang(rng);
  std::vector<Point> path(p.frames);
  for (std::size_t t = 0; t < p.frames; ++t) {
    path[t] = {x, y};
    a += turn(rng);
    x += v * std::cos(a);
    y += v * std::sin(a);
    // Mirror the heading as well so the walk keeps its speed.
    if (x < b.lo || x > b.hi) {
      x = reflect(x, b.lo, b.hi);
      a = kPi - a;
    }
    if (y < b.lo || y > b.hi) {
      y = reflect(y, b.lo, b.hi);
      a = -a;
    }
  }
  return path;
}

bool inside(SpriteShape shape, double dx, double dy, double half) {
  switch (shape) {
    case SpriteShape::Square:
      return std::abs(dx) <= half && std::abs(dy) <= half;
    case SpriteShape::Disc:
      return dx * dx + dy * dy <= half * half;
    case SpriteShape::Triangle: {
      // Apex up, base on the bottom edge of the bounding square.
      if (dy < -half || dy > half) return false;
      const double reach = half * (dy + half) / (2 * half);
      return std::abs(dx) <= reach;
    }
  }
  return false;
}

// Adds `weight * coverage` into alpha with a max, using 4x4 supersampling.
void stamp(std::vector<float>& alpha, std::size_t size, SpriteShape shape, double half, Point c,
           float weight) {
  constexpr int kSub = 4;
  const auto last = static_cast<long>(size) - 1;
  const long x0 = std::max(0L, static_cast<long>(std::floor(c.x - half - 1)));
  const long x1 = std::min(last, static_cast<long>(std::ceil(c.x + half + 1)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(c.y - half - 1)));
  const long y1 = std::min(last, static_cast<long>(std::ceil(c.y + half + 1)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSub - 0.5;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSub - 0.5;
          hits += inside(shape, px - c.x, py - c.y, half);
        }
      }
      if (hits == 0) continue;
      float& a = alpha[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
      a = std::max(a, weight * static_cast<float>(hits) / (kSub * kSub));
    }
  }
}

Rng video_rng(std::uint64_t seed, std::uint64_t id) { return make_rng({seed, tag(Stream::kData), id}); }

SyntheticVideo make_trajectory(const GeneratorParams& params, std::uint64_t id, Rng& rng) {
  params.validate();
  SyntheticVideo video;
  video.id = id;
  video.category = static_cast<MotionCategory>(id % kMotionCategories);
  std::uniform_real_distribution<double> log_speed(std::log(params.speed_min), std::log(params.speed_max));
  video.speed = std::exp(log_speed(rng));
  std::uniform_int_distribution<int> shape(0, 2);
  video.sprite = static_cast<SpriteShape>(shape(rng));
  std::uniform_int_distribution<std::size_t> side(params.sprite_min, params.sprite_max);
  video.sprite_size = side(rng);

  const Bounds b = center_bounds(params, video.sprite_size);
  switch (video.category) {
    case MotionCategory::Linear: video.path = linear_path(params, b, video.speed, rng); break;
    case MotionCategory::Circular: video.path = circular_path(params, b, video.speed, rng); break;
    case MotionCategory::Oscillatory: video.path = oscillatory_path(params, b, video.speed, rng); break;
    case MotionCategory::RandomWalk: video.path = walk_path(params, b, video.speed, rng); break;
  }

  video.travel.assign(params.frames, 0.0);
  for (std::size_t t = 1; t < params.frames; ++t) {
    if (video.category == MotionCategory::Oscillatory) {
      video.travel[t] = video.travel[t - 1] + std::hypot(video.path[t].x - video.path[t - 1].x,
                                                         video.path[t].y - video.path[t - 1].y);
    } else {
      // Exact arc length; reflections and turns do not change it.
      video.travel[t] = video.speed * static_cast<double>(t);
    }
  }
  return video;
}

}  // namespace

std::string_view category_name(MotionCategory c) {
  switch (c) {
    case MotionCategory::Linear: return "linear";
    case MotionCategory::Circular: return "circular";
    case MotionCategory::Oscillatory: return "oscillatory";
    case MotionCategory::RandomWalk: return "random-walk";
  }
  return "?";
}

std::string_view sprite_name(SpriteShape s) {
  switch (s) {
    case SpriteShape::Square: return "square";
    case SpriteShape::Disc: return "disc";
    case SpriteShape::Triangle: return "triangle";
  }
  return "?";
}

void GeneratorParams::validate() const {
  if (frames < 2 || size < 16) throw std::invalid_argument("generator needs at least 2 frames of 16x16");
  if (!(speed_min > 0 && speed_min <= speed_max)) throw std::invalid_argument("bad speed range");
  if (sprite_min < 2 || sprite_min > sprite_max || sprite_max * 3 > size) {
    throw std::invalid_argument("bad sprite size range");
  }
  if (!(noise_sigma >= 0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(oscillation_period >= 2)) throw std::invalid_argument("oscillation period must be >= 2 frames");
  if (!(trail_decay >= 0 && trail_decay < 1)) throw std::invalid_argument("trail decay must be in [0, 1)");
}

SyntheticVideo generate_trajectory(std::uint64_t seed, std::uint64_t id, const GeneratorParams& params) {
  auto rng = video_rng(seed, id);
  return make_trajectory(params, id, rng);
}

SyntheticVideo generate_video(std::uint64_t seed, std::uint64_t id, const GeneratorParams& params) {
  auto rng = video_rng(seed, id);
  SyntheticVideo video = make_trajectory(params, id, rng);

  const std::size_t n = params.size;
  std::vector<float> background(n * n);
  std::normal_distribution<double> noise(params.background_mean, params.noise_sigma);
  for (auto& px : background) px = static_cast<float>(noise(rng));

  FrameVolume& fv = video.frames;
  fv.channels = 1;
  fv.length = params.frames;
  fv.height = n;
  fv.width = n;
  fv.data.resize(params.frames * n * n);

  const double half = static_cast<double>(video.sprite_size) / 2.0;
  const auto level = static_cast<float>(params.sprite_level);
  std::vector<float> alpha(n * n);
  for (std::size_t t = 0; t < params.frames; ++t) {
    std::fill(alpha.begin(), alpha.end(), 0.0f);
    float weight = 1.0f;
    for (std::size_t k = 0; k <= params.trail_length && k <= t; ++k) {
      stamp(alpha, n, video.sprite, half, video.path[t - k], weight);
      weight *= static_cast<float>(params.trail_decay);
    }
    std::uint8_t* out = fv.data.data() + t * n * n;
    for (std::size_t i = 0; i < n * n; ++i) {
      const float v = background[i] + alpha[i] * (level - background[i]);
      out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return video;
}

}  // namespace transrank
