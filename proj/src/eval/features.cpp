#include "transrank/eval/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "transrank/numerics/parallel.hpp"
#include "transrank/transforms/spatial.hpp"

namespace transrank::eval {

void EvalConfig::validate() const {
  if (clips == 0) throw std::invalid_argument("eval clips must be positive");
  if (!(crop > 0 && crop <= 1)) throw std::invalid_argument("eval crop must be in (0, 1]");
  if (probe_rates.empty()) throw std::invalid_argument("at least one probe rate is required");
  if (speediness_clips == 0) throw std::invalid_argument("speediness_clips must be positive");
  if (probe_hidden == 0 || probe_epochs == 0 || probe_batch == 0) {
    throw std::invalid_argument("probe hidden width, epochs and batch must be positive");
  }
  if (!(probe_lr >= 0)) throw std::invalid_argument("probe lr must be non-negative");
  if (sync_windows == 0 || order_windows == 0) throw std::invalid_argument("probe windows must be positive");
  if (order_gap_min > order_gap_max) throw std::invalid_argument("order_gap_min exceeds order_gap_max");
}

Tensor eval_clip(const FrameVolume& video, std::span<const std::size_t> indices, double crop,
                 std::size_t frame_size) {
  Tensor clip = center_crop(gather_clip(video, indices), crop, frame_size);
  center_values(clip);
  return clip;
}

ClipFeatures extract_clip_features(Encoder& encoder, const Dataset& data, const EvalConfig& cfg,
                                   std::uint64_t seed, std::size_t workers) {
  cfg.validate();
  const auto& enc = encoder.config();
  const std::size_t dim = enc.feature_dim();
  const std::size_t clip_volume = enc.in_channels * enc.clip_length * enc.frame_size * enc.frame_size;
  const TemporalTransform base = TemporalTransform::speed(1);
  ClipFeatures out;
  out.features = Tensor({data.size(), cfg.clips, dim});
  out.labels.resize(data.size());
  parallel_for(data.size(), workers, [&](std::size_t v) {
    const auto& video = data.videos[v];
    if (video.channels != enc.in_channels) throw std::invalid_argument("video channels do not match the encoder");
    Rng rng = make_rng({seed, tag(Stream::kEval), data.manifest.records[v].id});
    const auto offsets = sample_offsets(video.length, enc.clip_length, std::span(&base, 1), cfg.clips, rng, 1.0);
    Tensor batch({cfg.clips, enc.in_channels, enc.clip_length, enc.frame_size, enc.frame_size});
    for (std::size_t c = 0; c < cfg.clips; ++c) {
      const auto idx = index_sequence({video.length, enc.clip_length, offsets[c], 1.0, base});
      const Tensor clip = eval_clip(video, idx, cfg.crop, enc.frame_size);
      std::memcpy(batch.raw() + c * clip_volume, clip.raw(), clip_volume * sizeof(float));
    }
    const auto features = encoder.encode_batch(batch).first;
    std::memcpy(out.features.raw() + v * cfg.clips * dim, features.raw(), cfg.clips * dim * sizeof(float));
    out.labels[v] = data.label(v);
  });
  return out;
}

FeatureBank average_clips(const ClipFeatures& clips) {
  const std::size_t videos = clips.features.dim(0), count = clips.features.dim(1), dim = clips.features.dim(2);
  FeatureBank bank;
  bank.features = Tensor({videos, dim});
  bank.labels = clips.labels;
  for (std::size_t v = 0; v < videos; ++v) {
    float* dst = bank.features.raw() + v * dim;
    for (std::size_t c = 0; c < count; ++c) {
      const float* src = clips.features.raw() + (v * count + c) * dim;
      for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
    }
    for (std::size_t d = 0; d < dim; ++d) dst[d] /= static_cast<float>(count);
  }
  return bank;
}

FeatureBank build_feature_bank(Encoder& encoder, const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                               std::size_t workers) {
  return average_clips(extract_clip_features(encoder, data, cfg, seed, workers));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::memcpy(out.raw() + r * d, x.raw() + rows[r] * d, d * sizeof(float));
  }
  return out;
}

Standardizer Standardizer::fit(const Tensor& rows) {
  if (rows.rank() != 2 || rows.dim(0) == 0) throw std::invalid_argument("standardizer needs a nonempty matrix");
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::vector<double> mean(d, 0), var(d, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows.raw()[i * d + j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = rows.raw()[i * d + j] - mean[j];
      var[j] += c * c;
    }
  }
  Standardizer s;
  s.mean.resize(d);
  s.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    s.mean[j] = static_cast<float>(mean[j]);
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    s.scale[j] = sd > 1e-6 ? static_cast<float>(sd) : 1.0f;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != mean.size()) throw std::invalid_argument("standardizer width mismatch");
  Tensor out(rows.shape());
  const std::size_t d = mean.size();
  for (std::size_t i = 0; i < rows.size(); ++i) out.raw()[i] = (rows.raw()[i] - mean[i % d]) / scale[i % d];
  return out;
}

}  // namespace transrank::eval
