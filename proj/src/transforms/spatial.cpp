#include "transrank/transforms/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace transrank {

namespace {

double draw(const Interval& range, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return range.lo + (range.hi - range.lo) * unit(rng);
}

struct AxisTap {
  std::size_t lo;
  std::size_t hi;
  float weight;
};

std::vector<AxisTap> axis_taps(double start, double extent, std::size_t out, std::size_t in) {
  std::vector<AxisTap> taps(out);
  const double step = extent / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t o = 0; o < out; ++o) {
    const double s = std::clamp(start + (static_cast<double>(o) + 0.5) * step - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    taps[o] = {lo, std::min(lo + 1, in - 1), static_cast<float>(s - static_cast<double>(lo))};
  }
  return taps;
}

void check_clip(const Tensor& clip) {
  if (clip.rank() != 4) {
    throw ShapeError("clip must be C x L x H x W, got " + shape_str(clip.shape()));
  }
}

}  // namespace

Tensor gather_clip(const FrameVolume& video, std::span<const std::size_t> indices) {
  const std::size_t area = video.frame_area();
  Tensor clip({video.channels, indices.size(), video.height, video.width});
  constexpr float kScale = 1.0f / 255.0f;
  for (std::size_t c = 0; c < video.channels; ++c) {
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] >= video.length) throw std::out_of_range("frame index beyond video length");
      const std::uint8_t* src = video.data.data() + (c * video.length + indices[k]) * area;
      float* dst = clip.raw() + (c * indices.size() + k) * area;
      for (std::size_t i = 0; i < area; ++i) dst[i] = static_cast<float>(src[i]) * kScale;
    }
  }
  return clip;
}

SpatialAugConfig SpatialAugConfig::crop_only() {
  SpatialAugConfig cfg;
  cfg.grayscale_prob = 0;
  cfg.gain = {1, 1};
  cfg.bias = {0, 0};
  cfg.rotations = {0};
  return cfg;
}

SpatialAugConfig SpatialAugConfig::identity(std::size_t height, std::size_t width) {
  SpatialAugConfig cfg = crop_only();
  const double ratio = static_cast<double>(width) / static_cast<double>(height);
  cfg.crop_area = {1, 1};
  cfg.crop_aspect = {ratio, ratio};
  cfg.out_size = height;
  return cfg;
}

void SpatialAugConfig::validate() const {
  auto ok = [](const Interval& r) { return r.lo <= r.hi && std::isfinite(r.lo) && std::isfinite(r.hi); };
  if (!ok(crop_area) || crop_area.lo <= 0 || crop_area.hi > 1) {
    throw std::invalid_argument("crop area range must lie in (0, 1]");
  }
  if (!ok(crop_aspect) || crop_aspect.lo <= 0) {
    throw std::invalid_argument("crop aspect range must be positive");
  }
  if (!(grayscale_prob >= 0 && grayscale_prob <= 1)) {
    throw std::invalid_argument("grayscale probability must be in [0, 1]");
  }
  if (!ok(gain) || !ok(bias)) throw std::invalid_argument("color jitter ranges are empty");
  if (rotations.empty()) throw std::invalid_argument("rotation set is empty");
  for (int r : rotations) {
    if (r < 0 || r > 3) throw std::invalid_argument("rotation index must be in 0..3");
  }
  if (out_size == 0) throw std::invalid_argument("output size must be positive");
}

Tensor crop_resize(const Tensor& clip, double x0, double y0, double w, double h,
                   std::size_t out_h, std::size_t out_w) {
  check_clip(clip);
  const std::size_t in_h = clip.dim(2), in_w = clip.dim(3);
  const auto ty = axis_taps(y0, h, out_h, in_h);
  const auto tx = axis_taps(x0, w, out_w, in_w);
  const std::size_t planes = clip.dim(0) * clip.dim(1);
  Tensor out({clip.dim(0), clip.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = clip.raw() + p * in_h * in_w;
    float* dst = out.raw() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const float* r0 = src + ty[oy].lo * in_w;
      const float* r1 = src + ty[oy].hi * in_w;
      const float wy = ty[oy].weight;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& c = tx[ox];
        const float top = r0[c.lo] + c.weight * (r0[c.hi] - r0[c.lo]);
        const float bottom = r1[c.lo] + c.weight * (r1[c.hi] - r1[c.lo]);
        dst[oy * out_w + ox] = top + wy * (bottom - top);
      }
    }
  }
  return out;
}

Tensor center_crop(const Tensor& clip, double side_fraction, std::size_t out_size) {
  check_clip(clip);
  const double h = static_cast<double>(clip.dim(2)), w = static_cast<double>(clip.dim(3));
  const double side = std::min(h, w) * side_fraction;
  return crop_resize(clip, (w - side) / 2, (h - side) / 2, side, side, out_size, out_size);
}

void center_values(Tensor& clip, float mean) {
  for (auto& v : clip.data()) v -= mean;
}

Tensor rotate90(const Tensor& clip, int quarter_turns) {
  check_clip(clip);
  const std::size_t n = clip.dim(2);
  if (clip.dim(3) != n) throw ShapeError("rotate90 needs square frames");
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return clip;
  Tensor out(clip.shape());
  const std::size_t planes = clip.dim(0) * clip.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = clip.raw() + p * n * n;
    float* dst = out.raw() + p * n * n;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        std::size_t sy = y, sx = x;
        switch (k) {
          case 1: sy = x; sx = n - 1 - y; break;
          case 2: sy = n - 1 - y; sx = n - 1 - x; break;
          case 3: sy = n - 1 - x; sx = y; break;
        }
        dst[y * n + x] = src[sy * n + sx];
      }
    }
  }
  return out;
}

AugmentedClip spatial_augment(const Tensor& clip, const SpatialAugConfig& cfg, Rng& rng) {
  check_clip(clip);
  const double in_h = static_cast<double>(clip.dim(2)), in_w = static_cast<double>(clip.dim(3));
  if (static_cast<double>(cfg.out_size) > std::min(in_h, in_w)) {
    throw std::invalid_argument("crop target size exceeds the source frame");
  }

  const double area = draw(cfg.crop_area, rng) * in_h * in_w;
  const double log_ratio = draw({std::log(cfg.crop_aspect.lo), std::log(cfg.crop_aspect.hi)}, rng);
  const double ratio = cfg.crop_aspect.lo == cfg.crop_aspect.hi ? cfg.crop_aspect.lo : std::exp(log_ratio);
  double w = std::sqrt(area * ratio);
  double h = std::sqrt(area / ratio);
  // Shrink oversize boxes uniformly so the sampled aspect ratio survives.
  const double fit = std::min({1.0, in_w / w, in_h / h});
  w *= fit;
  h *= fit;
  const double x0 = draw({0.0, in_w - w}, rng);
  const double y0 = draw({0.0, in_h - h}, rng);

  AugmentedClip out;
  out.aspect_ratio = w / h;
  out.clip = crop_resize(clip, x0, y0, w, h, cfg.out_size, cfg.out_size);

  std::bernoulli_distribution gray(cfg.grayscale_prob);
  if (gray(rng) && out.clip.dim(0) == 3) {
    const std::size_t plane = out.clip.size() / 3;
    float* r = out.clip.raw();
    float* g = r + plane;
    float* b = g + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const float y = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
      r[i] = g[i] = b[i] = y;
    }
  }

  const auto gain = static_cast<float>(draw(cfg.gain, rng));
  const auto bias = static_cast<float>(draw(cfg.bias, rng) * cfg.value_range);
  if (gain != 1.0f || bias != 0.0f) {
    for (auto& v : out.clip.data()) v = v * gain + bias;
  }

  std::uniform_int_distribution<std::size_t> pick(0, cfg.rotations.size() - 1);
  out.rotation = cfg.rotations[pick(rng)];
  if (out.rotation != 0) out.clip = rotate90(out.clip, out.rotation);
  return out;
}

}  // namespace transrank
