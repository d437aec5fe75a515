#include "transrank/eval/probes.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "transrank/losses/losses.hpp"
#include "transrank/numerics/ops.hpp"
#include "transrank/numerics/optim.hpp"
#include "transrank/numerics/parallel.hpp"

namespace transrank::eval {

namespace {

constexpr int kSyncCenter = kSyncPatterns / 2;

// Frames covered by one 1x clip step: l sampled frames at interval b.
std::size_t clip_extent(const EncoderConfig& enc) {
  return enc.clip_length * static_cast<std::size_t>(TemporalTransform::speed(1).base_interval);
}

std::vector<std::size_t> strided(std::size_t start, std::size_t count) {
  const auto b = static_cast<std::size_t>(TemporalTransform::speed(1).base_interval);
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = start + k * b;
  return idx;
}

void put_clip(Tensor& batch, std::size_t slot, const Tensor& clip) {
  std::memcpy(batch.raw() + slot * clip.size(), clip.raw(), clip.size() * sizeof(float));
}

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

double sync_shift_fraction(int pattern) {
  if (pattern < 0 || pattern >= kSyncPatterns) throw std::out_of_range("sync pattern out of range");
  return -static_cast<double>(pattern - kSyncCenter) / 4.0;
}

ProbeData sync_probe_data(Encoder& encoder, const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                          std::size_t workers) {
  cfg.validate();
  const auto& enc = encoder.config();
  const std::size_t extent = clip_extent(enc);
  const std::size_t quarter = extent / 4;
  const std::size_t reach = static_cast<std::size_t>(kSyncCenter) * quarter;  // largest shift either way
  const std::size_t span = (enc.clip_length - 1) * (extent / enc.clip_length) + 1;
  const std::size_t dim = enc.probe_dim();
  const std::size_t rows_per_video = cfg.sync_windows * kSyncPatterns;

  ProbeData out;
  out.features = Tensor({data.size() * rows_per_video, dim});
  out.labels.resize(data.size() * rows_per_video);
  parallel_for(data.size(), workers, [&](std::size_t v) {
    const auto& video = data.videos[v];
    if (video.length < 2 * reach + span) throw VideoTooShortError(2 * reach + span, video.length);
    Rng rng = make_rng({seed, tag(Stream::kProbe), data.manifest.records[v].id, 0});
    for (std::size_t w = 0; w < cfg.sync_windows; ++w) {
      const std::size_t a = uniform_index(rng, reach, video.length - span - reach);
      Tensor batch({1 + kSyncPatterns, enc.in_channels, enc.clip_length, enc.frame_size, enc.frame_size});
      put_clip(batch, 0, eval_clip(video, strided(a, enc.clip_length), cfg.crop, enc.frame_size));
      for (int k = 0; k < kSyncPatterns; ++k) {
        const std::size_t b = a + reach - static_cast<std::size_t>(k) * quarter;
        put_clip(batch, 1 + static_cast<std::size_t>(k),
                 eval_clip(video, strided(b, enc.clip_length), cfg.crop, enc.frame_size));
      }
      const auto probe = encoder.encode_batch(batch).second;
      for (int k = 0; k < kSyncPatterns; ++k) {
        const std::size_t r = v * rows_per_video + w * kSyncPatterns + static_cast<std::size_t>(k);
        float* dst = out.features.raw() + r * dim;
        const float* pa = probe.raw();
        const float* pb = probe.raw() + (1 + static_cast<std::size_t>(k)) * dim;
        for (std::size_t d = 0; d < dim; ++d) dst[d] = pa[d] - pb[d];
        out.labels[r] = k;
      }
    }
  });
  return out;
}

ProbeData order_probe_data(Encoder& encoder, const Dataset& data, const EvalConfig& cfg, std::uint64_t seed,
                           std::size_t workers) {
  cfg.validate();
  const auto& enc = encoder.config();
  if (enc.clip_length % 2 != 0) throw std::invalid_argument("order probe needs an even clip length");
  const std::size_t half = enc.clip_length / 2;
  const std::size_t step = clip_extent(enc) / enc.clip_length;
  const std::size_t sub_extent = half * step;                // start of x1 to the slot right after it
  const std::size_t sub_span = (half - 1) * step + 1;        // frames touched by one sub-clip
  const std::size_t need = sub_extent + cfg.order_gap_max + sub_span;
  const std::size_t dim = enc.probe_dim();
  const std::size_t rows_per_video = cfg.order_windows * 2;

  ProbeData out;
  out.features = Tensor({data.size() * rows_per_video, dim});
  out.labels.resize(data.size() * rows_per_video);
  parallel_for(data.size(), workers, [&](std::size_t v) {
    const auto& video = data.videos[v];
    if (video.length < need) throw VideoTooShortError(need, video.length);
    Rng rng = make_rng({seed, tag(Stream::kProbe), data.manifest.records[v].id, 1});
    Tensor batch({rows_per_video, enc.in_channels, enc.clip_length, enc.frame_size, enc.frame_size});
    for (std::size_t w = 0; w < cfg.order_windows; ++w) {
      const std::size_t gap = uniform_index(rng, cfg.order_gap_min, cfg.order_gap_max);
      const std::size_t start = uniform_index(rng, 0, video.length - (sub_extent + gap + sub_span));
      const auto x1 = strided(start, half);
      const auto x2 = strided(start + sub_extent + gap, half);
      std::vector<std::size_t> before(x1), after(x2);
      before.insert(before.end(), x2.begin(), x2.end());
      after.insert(after.end(), x1.begin(), x1.end());
      put_clip(batch, 2 * w, eval_clip(video, before, cfg.crop, enc.frame_size));
      put_clip(batch, 2 * w + 1, eval_clip(video, after, cfg.crop, enc.frame_size));
      out.labels[v * rows_per_video + 2 * w] = 0;
      out.labels[v * rows_per_video + 2 * w + 1] = 1;
    }
    const auto probe = encoder.encode_batch(batch).second;
    std::memcpy(out.features.raw() + v * rows_per_video * dim, probe.raw(), rows_per_video * dim * sizeof(float));
  });
  return out;
}

double train_probe(const ProbeData& train, const ProbeData& test, std::size_t classes, const EvalConfig& cfg,
                   std::uint64_t seed) {
  cfg.validate();
  if (train.labels.empty() || test.labels.empty()) throw std::invalid_argument("probe needs train and test rows");
  const auto scaler = Standardizer::fit(train.features);
  const Tensor x_train = scaler.apply(train.features);
  const Tensor x_test = scaler.apply(test.features);

  Rng init = make_rng({seed, tag(Stream::kInit), 2});
  Head probe("probe", {HeadKind::MLP, x_train.dim(1), cfg.probe_hidden, classes}, init);
  auto params = probe.parameters();
  OptimizerState opt;
  opt.base_lr = cfg.probe_lr;

  const std::size_t n = train.labels.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng({seed, tag(Stream::kProbe), 2, epoch});
    std::shuffle(order.begin(), order.end(), shuffle);
    const double lr = lr_cosine(cfg.probe_lr, static_cast<int>(epoch), static_cast<int>(cfg.probe_epochs));
    for (std::size_t b = 0; b < n; b += cfg.probe_batch) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(cfg.probe_batch, n - b));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(train.labels[r]);
      Tape tape;
      const Var scores = probe.forward(tape, tape.constant(gather_rows(x_train, rows)), Bind::Trainable);
      tape.backward(losses::transcls_loss(tape, scores, labels));
      sgd_step(params, opt, lr);
    }
  }
  Tape tape;
  const Var scores = probe.forward(tape, tape.constant(x_test), Bind::Frozen);
  return losses::argmax_accuracy(tape.value(scores), std::span<const int>(test.labels));
}

double temporal_probe_sync(Encoder& encoder, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                           std::uint64_t seed, std::size_t workers) {
  return train_probe(sync_probe_data(encoder, train, cfg, seed, workers),
                     sync_probe_data(encoder, test, cfg, seed, workers), kSyncPatterns, cfg, seed);
}

double temporal_probe_order(Encoder& encoder, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                            std::uint64_t seed, std::size_t workers) {
  return train_probe(order_probe_data(encoder, train, cfg, seed, workers),
                     order_probe_data(encoder, test, cfg, seed, workers), 2, cfg, seed);
}

}  // namespace transrank::eval
