#include "transrank/train/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <numeric>

#include "transrank/eval/report.hpp"
#include "transrank/losses/losses.hpp"
#include "transrank/numerics/ops.hpp"
#include "transrank/numerics/parallel.hpp"
#include "transrank/train/config.hpp"

namespace transrank::train {

namespace {

constexpr const char* kMomentumPrefix = "optim.momentum.";

// Clips of a batch of videos, concatenated in video order.
struct Batch {
  Tensor clips;
  std::vector<int> labels;
  std::vector<double> aspect_ratios;
  std::vector<int> rotations;
  std::size_t videos = 0;
};

Batch assemble(const Dataset& data, std::span<const std::size_t> videos, const PretrainConfig& cfg,
               std::uint64_t seed, int epoch, std::size_t workers) {
  std::vector<VideoClips> parts(videos.size());
  parallel_for(videos.size(), workers, [&](std::size_t i) {
    const std::size_t v = videos[i];
    parts[i] = sample_video_clips(data.videos[v], data.manifest.records[v].id, cfg, seed, epoch);
  });
  const std::size_t m = cfg.transforms.size();
  const std::size_t volume = parts.front().clips.size() / m;
  Shape shape = parts.front().clips.shape();
  shape[0] = videos.size() * m;
  Batch b;
  b.clips = Tensor(shape);
  b.videos = videos.size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::memcpy(b.clips.raw() + i * m * volume, parts[i].clips.raw(), m * volume * sizeof(float));
    b.labels.insert(b.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    b.aspect_ratios.insert(b.aspect_ratios.end(), parts[i].aspect_ratios.begin(), parts[i].aspect_ratios.end());
    b.rotations.insert(b.rotations.end(), parts[i].rotations.begin(), parts[i].rotations.end());
  }
  return b;
}

// Accumulates pretext judgments over batches.
struct AccuracyTally {
  std::vector<double> hits;
  std::vector<std::size_t> count;

  explicit AccuracyTally(std::size_t m) : hits(m, 0), count(m, 0) {}
  void add(const PretextAccuracy& a) {
    for (std::size_t t = 0; t < hits.size(); ++t) {
      hits[t] += a.column[t] * static_cast<double>(a.column_count[t]);
      count[t] += a.column_count[t];
    }
  }
  PretextAccuracy result() const {
    PretextAccuracy out;
    double all = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < hits.size(); ++t) {
      out.column.push_back(count[t] ? hits[t] / static_cast<double>(count[t]) : 0.0);
      out.column_count.push_back(count[t]);
      all += hits[t];
      n += count[t];
    }
    out.overall = n ? all / static_cast<double>(n) : 0.0;
    return out;
  }
};

Tensor transform_table(std::span<const TemporalTransform> set) {
  Tensor t({set.size(), 3});
  for (std::size_t i = 0; i < set.size(); ++i) {
    t.at({i, 0}) = static_cast<float>(static_cast<int>(set[i].kind));
    t.at({i, 1}) = static_cast<float>(set[i].rate);
    t.at({i, 2}) = static_cast<float>(set[i].base_interval);
  }
  return t;
}

}  // namespace

std::string framework_name(Framework f) { return f == Framework::Rank ? "rank" : "cls"; }

Framework parse_framework(const std::string& text) {
  if (text == "rank") return Framework::Rank;
  if (text == "cls") return Framework::Cls;
  throw std::invalid_argument("framework must be rank or cls, got '" + text + "'");
}

void PretrainConfig::validate() const {
  if (transforms.size() < 2) throw std::invalid_argument("the transform set needs at least two transforms");
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    for (std::size_t j = i + 1; j < transforms.size(); ++j) {
      if (transforms[i] == transforms[j]) throw std::invalid_argument("duplicate transform " + transforms[i].label());
    }
  }
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (batch_videos == 0) throw std::invalid_argument("batch_videos must be positive");
  if (!(lr >= 0) || !(momentum >= 0 && momentum < 1) || !(weight_decay >= 0)) {
    throw std::invalid_argument("lr, momentum and weight_decay must satisfy lr >= 0, 0 <= momentum < 1, wd >= 0");
  }
  if (!(grad_clip >= 0)) throw std::invalid_argument("grad_clip must be >= 0");
  if (!(margin >= 0) || !(spatial_weight >= 0)) throw std::invalid_argument("margin and spatial_weight must be >= 0");
  if (!(jitter_min > 0 && jitter_min <= jitter_max)) throw std::invalid_argument("jitter range must be 0 < min <= max");
  if (!(crop_area_min > 0 && crop_area_min <= 1)) throw std::invalid_argument("crop_area_min must be in (0, 1]");
  if (head == HeadKind::MLP && hidden == 0) throw std::invalid_argument("an MLP head needs hidden > 0");
  model_config().encoder.validate();
}

ModelConfig PretrainConfig::model_config() const {
  ModelConfig m;
  m.encoder.clip_length = clip_length;
  m.encoder.frame_size = frame_size;
  m.encoder.channels = channels;
  m.head = head;
  m.hidden = hidden;
  m.transforms = transforms.size();
  m.spatial = spatial;
  return m;
}

SpatialAugConfig PretrainConfig::augmentation() const {
  SpatialAugConfig aug;
  aug.crop_area = {crop_area_min, 1.0};
  aug.out_size = frame_size;
  if (spatial) aug.rotations = {0, 1, 2, 3};
  return aug;
}

VideoClips sample_video_clips(const FrameVolume& video, std::uint64_t video_id, const PretrainConfig& cfg,
                              std::uint64_t seed, int epoch) {
  const std::size_t m = cfg.transforms.size();
  Rng rng = make_rng({seed, tag(Stream::kClip), static_cast<std::uint64_t>(epoch), video_id});
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto offsets = sample_offsets(video.length, cfg.clip_length, cfg.transforms, m, rng, cfg.jitter_max);
  const auto aug = cfg.augmentation();

  VideoClips out;
  out.clips = Tensor({m, video.channels, cfg.clip_length, cfg.frame_size, cfg.frame_size});
  const std::size_t volume = out.clips.size() / m;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = cfg.transforms[static_cast<std::size_t>(perm[i])];
    const double j = jitter_factor(rng, cfg.jitter_min, cfg.jitter_max);
    const auto idx = index_sequence({video.length, cfg.clip_length, offsets[i], j, t}, &rng);
    auto a = spatial_augment(gather_clip(video, idx), aug, rng);
    center_values(a.clip);
    std::memcpy(out.clips.raw() + i * volume, a.clip.raw(), volume * sizeof(float));
    out.labels.push_back(perm[i]);
    out.aspect_ratios.push_back(a.aspect_ratio);
    out.rotations.push_back(a.rotation);
  }
  return out;
}

DivergenceError::DivergenceError(std::size_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step(step) {}

PretextAccuracy pretext_accuracy(const Tensor& scores, std::span<const int> labels, std::size_t group,
                                 Framework framework) {
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  if (labels.size() != n || group == 0 || n % group != 0) throw std::invalid_argument("bad pretext accuracy input");
  PretextAccuracy batch;
  batch.column.assign(m, 0);
  batch.column_count.assign(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<std::size_t>(labels[i]);
    if (framework == Framework::Cls) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < m; ++c) {
        if (scores.at({i, c}) > scores.at({i, best})) best = c;
      }
      batch.column[t] += best == t ? 1 : 0;
      ++batch.column_count[t];
      continue;
    }
    const std::size_t g0 = (i / group) * group;
    for (std::size_t j = g0; j < g0 + group; ++j) {
      if (j == i || labels[j] == labels[i]) continue;
      batch.column[t] += scores.at({i, t}) > scores.at({j, t}) ? 1 : 0;
      ++batch.column_count[t];
    }
  }
  double hits = 0;
  std::size_t judged = 0;
  for (std::size_t t = 0; t < m; ++t) {
    hits += batch.column[t];
    judged += batch.column_count[t];
    if (batch.column_count[t]) batch.column[t] /= static_cast<double>(batch.column_count[t]);
  }
  batch.overall = judged ? hits / static_cast<double>(judged) : 0.0;
  return batch;
}

Pretrainer::Pretrainer(PretrainConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), std::move(cfg))), seed_(seed), model_(cfg_.model_config(), seed) {
  opt_.base_lr = cfg_.lr;
  opt_.momentum = cfg_.momentum;
  opt_.weight_decay = cfg_.weight_decay;
}

std::uint64_t Pretrainer::config_digest() const {
  return fnv1a(format_pretrain(cfg_) + "seed = " + std::to_string(seed_) + "\n");
}

EpochStats Pretrainer::train_epoch(const Dataset& data, std::size_t workers) {
  if (epoch_ >= cfg_.epochs) throw std::logic_error("all configured epochs have already run");
  if (data.size() == 0) throw std::invalid_argument("cannot pretrain on an empty dataset");
  const std::size_t m = cfg_.transforms.size();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng = make_rng({seed_, tag(Stream::kEpochOrder), static_cast<std::uint64_t>(epoch_)});
  std::shuffle(order.begin(), order.end(), order_rng);

  std::vector<std::span<const std::size_t>> batches;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch_videos) {
    batches.emplace_back(order.data() + b, std::min(cfg_.batch_videos, order.size() - b));
  }
  const double lr = lr_cosine(cfg_.lr, epoch_, cfg_.epochs);
  auto params = model_.parameters();
  auto prepare = [&, epoch = epoch_](std::size_t k) { return assemble(data, batches[k], cfg_, seed_, epoch, workers); };

  double loss_sum = 0;
  AccuracyTally tally(m);
  std::future<Batch> next;
  if (workers > 1) next = std::async(std::launch::async, prepare, 0);
  for (std::size_t k = 0; k < batches.size(); ++k) {
    Batch batch = workers > 1 ? next.get() : prepare(k);
    if (workers > 1 && k + 1 < batches.size()) next = std::async(std::launch::async, prepare, k + 1);

    Tape tape;
    const auto out = model_.forward(tape, tape.constant(std::move(batch.clips)), Bind::Trainable);
    Var loss = cfg_.framework == Framework::Rank
                   ? losses::transrank_loss(tape, out.temporal, batch.labels, m, cfg_.margin)
                   : losses::transcls_loss(tape, out.temporal, batch.labels);
    if (cfg_.spatial) {
      const Var spatial[] = {losses::spatial_rank_loss(tape, ops::reshape(tape, out.aspect, {batch.aspect_ratios.size()}),
                                                         batch.aspect_ratios, m, cfg_.margin),
                             losses::rotation_loss(tape, out.rotation, batch.rotations)};
      const double weights[] = {cfg_.spatial_weight, cfg_.spatial_weight};
      loss = losses::combined_loss(tape, loss, spatial, weights);
    }
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw DivergenceError(step_, "loss is " + std::to_string(value));
    tape.backward(loss);
    try {
      if (cfg_.grad_clip > 0) clip_grad_norm(params, cfg_.grad_clip);
      sgd_step(params, opt_, lr);
    } catch (const NumericError& e) {
      throw DivergenceError(step_, e.what());
    }
    ++step_;
    loss_sum += value * static_cast<double>(batch.videos);
    tally.add(pretext_accuracy(tape.value(out.temporal), batch.labels, m, cfg_.framework));
  }

  const auto acc = tally.result();
  EpochStats stats{epoch_, loss_sum / static_cast<double>(data.size()), acc.overall, lr, acc.column};
  ++epoch_;
  return stats;
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint ckpt;
  const auto params = model_.parameters();
  export_parameters<float>(params, ckpt);
  for (const auto* p : params) {
    const auto it = opt_.buffers.find(p->name);
    if (it != opt_.buffers.end()) ckpt.set(kMomentumPrefix + p->name, it->second);
  }
  ckpt.set_u64("meta.epoch", static_cast<std::uint64_t>(epoch_));
  ckpt.set_u64("meta.step", step_);
  ckpt.set_u64("meta.config_digest", config_digest());
  ckpt.set_u64("meta.framework", cfg_.framework == Framework::Rank ? 0 : 1);
  ckpt.set_u64("meta.clip_length", cfg_.clip_length);
  ckpt.set_u64("meta.frame_size", cfg_.frame_size);
  ckpt.set("meta.transforms", transform_table(cfg_.transforms));
  return ckpt;
}

void Pretrainer::restore(const Checkpoint& ckpt) {
  if (ckpt.get_u64("meta.config_digest") != config_digest()) {
    throw CheckpointError("checkpoint was written by a different pretraining config or seed");
  }
  auto params = model_.parameters();
  import_parameters<float>(params, ckpt);
  opt_.buffers.clear();
  for (const auto* p : params) {
    if (const Tensor* buf = ckpt.find(kMomentumPrefix + p->name)) opt_.buffers[p->name] = *buf;
  }
  epoch_ = static_cast<int>(ckpt.get_u64("meta.epoch"));
  step_ = ckpt.get_u64("meta.step");
}

PretextAccuracy evaluate_pretext(VideoModel& model, const Dataset& data, const PretrainConfig& cfg,
                                 std::uint64_t seed, int epoch, std::size_t workers) {
  const std::size_t m = cfg.transforms.size();
  if (model.config().transforms != m) throw std::invalid_argument("model head width does not match the transform set");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  AccuracyTally tally(m);
  for (std::size_t b = 0; b < all.size(); b += cfg.batch_videos) {
    const std::span<const std::size_t> videos(all.data() + b, std::min(cfg.batch_videos, all.size() - b));
    Batch batch = assemble(data, videos, cfg, seed, epoch, workers);
    Tape tape;
    const auto out = model.forward(tape, tape.constant(std::move(batch.clips)), Bind::Frozen);
    tally.add(pretext_accuracy(tape.value(out.temporal), batch.labels, m, cfg.framework));
  }
  return tally.result();
}

PretrainResult pretrain(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed, std::size_t workers,
                        const std::function<void(const EpochStats&)>& on_epoch) {
  Pretrainer trainer(cfg, seed);
  PretrainResult result;
  while (trainer.epoch() < cfg.epochs) {
    result.history.push_back(trainer.train_epoch(data, workers));
    if (on_epoch) on_epoch(result.history.back());
  }
  result.checkpoint = trainer.checkpoint();
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochStats> history,
                       std::span<const TemporalTransform> transforms) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,loss,pretext_acc,lr";
  for (const auto& t : transforms) os << ",acc_" << t.label();
  os << '\n';
  for (const auto& e : history) {
    os << e.epoch << ',' << eval::format_double(e.loss) << ',' << eval::format_double(e.pretext_acc) << ','
       << eval::format_double(e.lr);
    for (double a : e.column_acc) os << ',' << eval::format_double(a);
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<TemporalTransform> checkpoint_transforms(const Checkpoint& ckpt) {
  const Tensor& t = ckpt.at("meta.transforms");
  if (t.rank() != 2 || t.dim(1) != 3) throw CheckpointError("meta.transforms must be M × 3");
  std::vector<TemporalTransform> out;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    const int kind = static_cast<int>(t.at({i, 0}));
    if (kind < 0 || kind > static_cast<int>(TemporalKind::Shuffle)) throw CheckpointError("unknown transform kind");
    out.push_back({static_cast<TemporalKind>(kind), static_cast<double>(t.at({i, 1})),
                   static_cast<int>(t.at({i, 2}))});
  }
  return out;
}

Framework checkpoint_framework(const Checkpoint& ckpt) {
  const auto f = ckpt.get_u64("meta.framework");
  if (f > 1) throw CheckpointError("unknown framework code in checkpoint");
  return f == 0 ? Framework::Rank : Framework::Cls;
}

ModelConfig infer_model_config(const Checkpoint& ckpt) {
  ModelConfig m;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Tensor& w = ckpt.at("encoder.conv" + std::to_string(s + 1) + ".weight");
    if (w.rank() != 5) throw CheckpointError("encoder weights must have rank 5");
    m.encoder.channels[s] = w.dim(0);
    if (s == 0) {
      m.encoder.in_channels = w.dim(1);
      m.encoder.kernel = w.dim(2);
    }
  }
  m.encoder.clip_length = ckpt.contains("meta.clip_length") ? ckpt.get_u64("meta.clip_length") : 16;
  m.encoder.frame_size = ckpt.contains("meta.frame_size") ? ckpt.get_u64("meta.frame_size") : 32;
  if (const Tensor* fc = ckpt.find("temporal.fc.weight")) {
    m.head = HeadKind::FC;
    m.transforms = fc->dim(1);
  } else {
    m.head = HeadKind::MLP;
    m.hidden = ckpt.at("temporal.fc1.weight").dim(1);
    m.transforms = ckpt.at("temporal.fc2.weight").dim(1);
  }
  m.spatial = ckpt.contains(m.head == HeadKind::FC ? "aspect.fc.weight" : "aspect.fc1.weight");
  try {
    m.encoder.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint encoder is invalid: ") + e.what());
  }
  return m;
}

VideoModel load_video_model(const Checkpoint& ckpt) {
  VideoModel model(infer_model_config(ckpt), 0);
  auto params = model.parameters();
  import_parameters<float>(params, ckpt);
  return model;
}

}  // namespace transrank::train
