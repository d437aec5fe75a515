#include "transrank/eval/speediness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "transrank/numerics/parallel.hpp"

namespace transrank::eval {

namespace {

bool is_speed(const TemporalTransform& t, double rate) {
  return t.kind == TemporalKind::Speed && t.rate == rate;
}

double population_mean(std::span<const SpeedinessRecord> records, double rate) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (is_speed(r.transform, rate)) {
      sum += r.raw;
      ++n;
    }
  }
  if (n == 0) throw std::domain_error("speediness normalization needs both 1x and 2x clips");
  return sum / static_cast<double>(n);
}

}  // namespace

AffineMap fit_speediness_map(std::span<const SpeedinessRecord> records) {
  const double a = population_mean(records, 1.0);
  const double c = population_mean(records, 2.0);
  if (a == c) throw std::domain_error("1x and 2x speediness means are equal; the normalization is degenerate");
  return {a, c - a};
}

void normalize_speediness(std::span<SpeedinessRecord> records) {
  const AffineMap map = fit_speediness_map(records);
  for (auto& r : records) r.normalized = map(r.raw);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<QuantileRow> summarize_speediness(std::span<const SpeedinessRecord> records,
                                              std::span<const TemporalTransform> rates) {
  std::vector<QuantileRow> rows;
  for (const auto& rate : rates) {
    std::vector<double> v;
    for (const auto& r : records) {
      if (r.transform == rate) v.push_back(r.normalized);
    }
    if (v.empty()) continue;
    rows.push_back({rate.label(), quantile(v, 0.05), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75),
                    quantile(v, 0.95)});
  }
  return rows;
}

std::vector<SpeedinessRecord> speediness(VideoModel& model, std::span<const TemporalTransform> trained,
                                         const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                                         std::size_t workers) {
  cfg.validate();
  if (trained.size() != 2 || model.config().transforms != 2) {
    throw std::invalid_argument("speediness needs a model trained on exactly {1x, 2x}");
  }
  const std::size_t col1 = is_speed(trained[0], 1.0) ? 0 : 1;
  const std::size_t col2 = 1 - col1;
  if (!is_speed(trained[col1], 1.0) || !is_speed(trained[col2], 2.0)) {
    throw std::invalid_argument("speediness needs a model trained on exactly {1x, 2x}, got " +
                                format_transform_list(trained));
  }
  const auto& enc = model.config().encoder;
  const std::size_t clip_volume = enc.in_channels * enc.clip_length * enc.frame_size * enc.frame_size;
  const std::size_t rates = cfg.probe_rates.size();
  const std::size_t per_video = rates * cfg.speediness_clips;
  std::vector<SpeedinessRecord> records(data.size() * per_video);

  parallel_for(data.size(), workers, [&](std::size_t v) {
    const auto& video = data.videos[v];
    const std::uint64_t id = data.manifest.records[v].id;
    Rng rng = make_rng({seed, tag(Stream::kEval), id, 1});
    const auto offsets =
        sample_offsets(video.length, enc.clip_length, cfg.probe_rates, cfg.speediness_clips, rng, 1.0);
    Tensor batch({per_video, enc.in_channels, enc.clip_length, enc.frame_size, enc.frame_size});
    for (std::size_t c = 0; c < cfg.speediness_clips; ++c) {
      for (std::size_t r = 0; r < rates; ++r) {
        const auto idx = index_sequence({video.length, enc.clip_length, offsets[c], 1.0, cfg.probe_rates[r]});
        const Tensor clip = eval_clip(video, idx, cfg.crop, enc.frame_size);
        std::memcpy(batch.raw() + (c * rates + r) * clip_volume, clip.raw(), clip_volume * sizeof(float));
      }
    }
    Tape tape;
    const auto out = model.forward(tape, tape.constant(batch), Bind::Frozen);
    const auto& s = tape.value(out.temporal);
    for (std::size_t k = 0; k < per_video; ++k) {
      auto& rec = records[v * per_video + k];
      rec.transform = cfg.probe_rates[k % rates];
      rec.video_id = id;
      rec.raw = static_cast<double>(s.at({k, col2})) - static_cast<double>(s.at({k, col1}));
    }
  });
  normalize_speediness(records);
  return records;
}

}  // namespace transrank::eval
