#include "transrank/train/transfer.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "transrank/losses/losses.hpp"
#include "transrank/numerics/optim.hpp"
#include "transrank/numerics/parallel.hpp"
#include "transrank/train/pretrain.hpp"
#include "transrank/transforms/spatial.hpp"

namespace transrank::train {

namespace {

std::size_t class_count(std::span<const int> a, std::span<const int> b) {
  int top = -1;
  for (int l : a) top = std::max(top, l);
  for (int l : b) top = std::max(top, l);
  if (top < 1) throw std::invalid_argument("transfer needs at least two classes");
  return static_cast<std::size_t>(top) + 1;
}

// Video-level accuracy from per-clip logits (videos·clips × classes).
double video_accuracy(const Tensor& logits, std::size_t clips, std::span<const int> labels) {
  const std::size_t classes = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    std::vector<double> mean(classes, 0);
    for (std::size_t c = 0; c < clips; ++c) {
      for (std::size_t k = 0; k < classes; ++k) mean[k] += logits.at({v * clips + c, k});
    }
    const auto best = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    hits += best == labels[v] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Tensor flatten_clips(const eval::ClipFeatures& f) {
  return f.features.reshaped({f.features.dim(0) * f.features.dim(1), f.features.dim(2)});
}

TransferReport summarize(TransferMode mode, std::vector<GridPoint> grid) {
  TransferReport r;
  r.mode = mode;
  r.grid = std::move(grid);
  r.best_lr = r.grid.front().lr;
  r.best_accuracy = r.grid.front().accuracy;
  for (const auto& g : r.grid) {
    if (g.accuracy > r.best_accuracy) {
      r.best_accuracy = g.accuracy;
      r.best_lr = g.lr;
    }
  }
  return r;
}

// One augmented 1x training clip per video for a finetuning epoch.
Tensor finetune_batch(const Dataset& data, std::span<const std::size_t> videos, const EncoderConfig& enc,
                      std::uint64_t seed, std::size_t epoch, std::size_t workers) {
  const TemporalTransform base = TemporalTransform::speed(1);
  auto aug = SpatialAugConfig::crop_only();
  aug.out_size = enc.frame_size;
  Tensor batch({videos.size(), enc.in_channels, enc.clip_length, enc.frame_size, enc.frame_size});
  const std::size_t volume = batch.size() / videos.size();
  parallel_for(videos.size(), workers, [&](std::size_t i) {
    const auto& video = data.videos[videos[i]];
    Rng rng = make_rng({seed, tag(Stream::kTransfer), epoch, data.manifest.records[videos[i]].id});
    const auto offset = sample_offsets(video.length, enc.clip_length, std::span(&base, 1), 1, rng)[0];
    const double j = jitter_factor(rng);
    const auto idx = index_sequence({video.length, enc.clip_length, offset, j, base});
    auto clip = spatial_augment(gather_clip(video, idx), aug, rng).clip;
    center_values(clip);
    std::memcpy(batch.raw() + i * volume, clip.raw(), volume * sizeof(float));
  });
  return batch;
}

}  // namespace

std::string transfer_mode_name(TransferMode mode) { return mode == TransferMode::Linear ? "linear" : "finetune"; }

TransferMode parse_transfer_mode(const std::string& text) {
  if (text == "linear") return TransferMode::Linear;
  if (text == "finetune") return TransferMode::Finetune;
  throw std::invalid_argument("transfer mode must be linear or finetune, got '" + text + "'");
}

void TransferConfig::validate() const {
  if (epochs == 0 || batch_videos == 0) throw std::invalid_argument("transfer epochs and batch must be positive");
  if (lr_grid.empty()) throw std::invalid_argument("the lr grid must not be empty");
  for (double lr : lr_grid) {
    if (!(lr >= 0)) throw std::invalid_argument("learning rates must be non-negative");
  }
  for (double m : milestones) {
    if (!(m > 0 && m < 1)) throw std::invalid_argument("milestones are fractions in (0, 1)");
  }
  if (!(momentum >= 0 && momentum < 1) || !(weight_decay >= 0) || !(dropout >= 0 && dropout < 1)) {
    throw std::invalid_argument("momentum and dropout must be in [0, 1), weight_decay >= 0");
  }
}

double linear_classifier_accuracy(const eval::ClipFeatures& train, const eval::ClipFeatures& test, double lr,
                                  const TransferConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t classes = class_count(train.labels, test.labels);
  const std::size_t clips = train.features.dim(1);
  const auto scaler = eval::Standardizer::fit(flatten_clips(train));
  const Tensor x_train = scaler.apply(flatten_clips(train));
  const Tensor x_test = scaler.apply(flatten_clips(test));
  std::vector<int> y_train;
  for (int l : train.labels) y_train.insert(y_train.end(), clips, l);

  Rng init = make_rng({seed, tag(Stream::kInit), 3});
  Head head("linear", {HeadKind::FC, x_train.dim(1), 0, classes}, init);
  auto params = head.parameters();
  OptimizerState opt{lr, cfg.momentum, cfg.weight_decay, {}};
  const std::size_t n = y_train.size();
  const std::size_t batch = cfg.batch_videos * clips;
  std::vector<std::size_t> order(n);
  const int total = static_cast<int>(cfg.epochs);
  for (int epoch = 0; epoch < total; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng({seed, tag(Stream::kTransfer), 0, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle);
    const double step_lr = lr_multistep(lr, epoch, total, cfg.milestones, cfg.lr_factor);
    for (std::size_t b = 0; b < n; b += batch) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(batch, n - b));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(y_train[r]);
      Tape tape;
      const Var scores = head.forward(tape, tape.constant(eval::gather_rows(x_train, rows)), Bind::Trainable);
      tape.backward(losses::transcls_loss(tape, scores, labels));
      sgd_step(params, opt, step_lr);
    }
  }
  Tape tape;
  const Var logits = head.forward(tape, tape.constant(x_test), Bind::Frozen);
  return video_accuracy(tape.value(logits), test.features.dim(1), test.labels);
}

TransferReport linear_eval(Encoder& encoder, const Dataset& train, const Dataset& test, const TransferConfig& cfg,
                           const eval::EvalConfig& eval_cfg, std::uint64_t seed, std::size_t workers) {
  cfg.validate();
  const auto f_train = eval::extract_clip_features(encoder, train, eval_cfg, seed, workers);
  const auto f_test = eval::extract_clip_features(encoder, test, eval_cfg, seed, workers);
  std::vector<GridPoint> grid;
  for (double lr : cfg.lr_grid) grid.push_back({lr, linear_classifier_accuracy(f_train, f_test, lr, cfg, seed)});
  return summarize(TransferMode::Linear, std::move(grid));
}

TransferReport finetune(const Checkpoint& ckpt, const Dataset& train, const Dataset& test, const TransferConfig& cfg,
                        const eval::EvalConfig& eval_cfg, std::uint64_t seed, std::size_t workers) {
  cfg.validate();
  if (train.size() == 0 || test.size() == 0) throw std::invalid_argument("finetuning needs train and test videos");
  std::vector<int> train_labels, test_labels;
  for (std::size_t i = 0; i < train.size(); ++i) train_labels.push_back(train.label(i));
  for (std::size_t i = 0; i < test.size(); ++i) test_labels.push_back(test.label(i));
  const std::size_t classes = class_count(train_labels, test_labels);
  const EncoderConfig enc = infer_model_config(ckpt).encoder;
  const int total = static_cast<int>(cfg.epochs);

  std::vector<GridPoint> grid;
  for (std::size_t g = 0; g < cfg.lr_grid.size(); ++g) {
    const double lr = cfg.lr_grid[g];
    Classifier clf(enc, classes, seed, cfg.dropout);
    auto enc_params = clf.encoder().parameters();
    import_parameters<float>(enc_params, ckpt);
    auto params = clf.parameters();
    OptimizerState opt{lr, cfg.momentum, cfg.weight_decay, {}};
    std::vector<std::size_t> order(train.size());
    std::size_t step = 0;
    for (int epoch = 0; epoch < total; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle = make_rng({seed, tag(Stream::kTransfer), 1, static_cast<std::uint64_t>(epoch)});
      std::shuffle(order.begin(), order.end(), shuffle);
      const double step_lr = lr_multistep(lr, epoch, total, cfg.milestones, cfg.lr_factor);
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_videos) {
        const std::span<const std::size_t> videos(order.data() + b, std::min(cfg.batch_videos, order.size() - b));
        std::vector<int> labels;
        for (auto v : videos) labels.push_back(train.label(v));
        Tensor clips = finetune_batch(train, videos, enc, seed, static_cast<std::size_t>(epoch), workers);
        Rng drop = make_rng({seed, tag(Stream::kDropout), g, step++});
        Tape tape;
        const Var logits = clf.forward(tape, tape.constant(std::move(clips)), Bind::Trainable, &drop);
        tape.backward(losses::transcls_loss(tape, logits, labels));
        sgd_step(params, opt, step_lr);
      }
    }
    const auto feats = eval::extract_clip_features(clf.encoder(), test, eval_cfg, seed, workers);
    Tape tape;
    const Var logits = clf.forward_features(tape, tape.constant(flatten_clips(feats)), nullptr);
    grid.push_back({lr, video_accuracy(tape.value(logits), feats.features.dim(1), test_labels)});
  }
  return summarize(TransferMode::Finetune, std::move(grid));
}

std::vector<eval::MetricRow> transfer_rows(const TransferReport& report) {
  std::vector<eval::MetricRow> rows;
  for (const auto& g : report.grid) rows.emplace_back("accuracy@lr=" + eval::format_double(g.lr), g.accuracy);
  rows.emplace_back("best_lr", report.best_lr);
  rows.emplace_back("best_accuracy", report.best_accuracy);
  return rows;
}

}  // namespace transrank::train
