#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transrank/model/model.hpp"
#include "transrank/numerics/optim.hpp"
#include "transrank/synthdata/dataset.hpp"
#include "transrank/transforms/spatial.hpp"
#include "transrank/transforms/temporal.hpp"

namespace transrank::train {

enum class Framework { Rank, Cls };

std::string framework_name(Framework f);
Framework parse_framework(const std::string& text);

struct PretrainConfig {
  std::vector<TemporalTransform> transforms{TemporalTransform::speed(1), TemporalTransform::speed(2),
                                            TemporalTransform::reverse()};
  Framework framework = Framework::Rank;
  HeadKind head = HeadKind::FC;
  std::size_t hidden = 128;
  bool spatial = false;
  double spatial_weight = 0.5;
  double margin = 0.5;
  int epochs = 100;
  std::size_t batch_videos = 16;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Joint gradient-norm cap per step; 0 disables it.
  double grad_clip = 1.0;
  double jitter_min = 0.8;
  double jitter_max = 1.2;
  double crop_area_min = 0.4;
  std::size_t clip_length = 16;
  std::size_t frame_size = 32;
  std::array<std::size_t, kStages> channels{8, 16, 32};

  void validate() const;
  ModelConfig model_config() const;
  SpatialAugConfig augmentation() const;
};

/// One video's clips for one epoch: M clips, transforms assigned by a fresh
/// permutation, each with its own jitter and spatial augmentation.
struct VideoClips {
  Tensor clips;             // M × C × l × H × W
  std::vector<int> labels;  // transform column per clip
  std::vector<double> aspect_ratios;
  std::vector<int> rotations;
};

/// Deterministic in (seed, epoch, video_id) alone.
VideoClips sample_video_clips(const FrameVolume& video, std::uint64_t video_id, const PretrainConfig& cfg,
                              std::uint64_t seed, int epoch);

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  double pretext_acc = 0;
  double lr = 0;
  std::vector<double> column_acc;  // one entry per transform of the set
};

/// The loss became NaN or infinite; `step` counts optimizer steps from 0.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what);
  std::size_t step;
};

/// Pretext accuracy of a batch of videos, overall and per transform column.
/// Ranking: clip pairs of one video ordered correctly at margin 0 in the
/// column of the first clip's transform. Classification: argmax hits.
struct PretextAccuracy {
  double overall = 0;
  std::vector<double> column;
  std::vector<std::size_t> column_count;  // judgments behind each column entry
};
PretextAccuracy pretext_accuracy(const Tensor& scores, std::span<const int> labels, std::size_t group,
                                 Framework framework);

class Pretrainer {
 public:
  Pretrainer(PretrainConfig cfg, std::uint64_t seed);

  /// Runs epoch `epoch()` over every video once and advances the counter.
  /// With workers > 1 the next batch is assembled while the current one trains.
  EpochStats train_epoch(const Dataset& data, std::size_t workers = 1);

  int epoch() const { return epoch_; }
  const PretrainConfig& config() const { return cfg_; }
  VideoModel& model() { return model_; }
  std::uint64_t config_digest() const;

  /// Parameters, momentum buffers and the metadata needed to resume.
  Checkpoint checkpoint() const;
  /// Throws CheckpointError if the checkpoint came from a different config or seed.
  void restore(const Checkpoint& ckpt);

 private:
  PretrainConfig cfg_;
  std::uint64_t seed_;
  VideoModel model_;
  OptimizerState opt_;
  int epoch_ = 0;
  std::size_t step_ = 0;
};

/// Held-out pretext accuracy, clips drawn as in training for `epoch`.
PretextAccuracy evaluate_pretext(VideoModel& model, const Dataset& data, const PretrainConfig& cfg,
                                 std::uint64_t seed, int epoch = 0, std::size_t workers = 1);

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

/// Trains cfg.epochs epochs from scratch.
PretrainResult pretrain(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed, std::size_t workers = 1,
                        const std::function<void(const EpochStats&)>& on_epoch = {});

/// `epoch,loss,pretext_acc,lr` followed by one `acc_<transform>` column per transform.
void write_history_csv(const std::filesystem::path& path, std::span<const EpochStats> history,
                       std::span<const TemporalTransform> transforms);

// Checkpoint metadata written by Pretrainer.
std::vector<TemporalTransform> checkpoint_transforms(const Checkpoint& ckpt);
Framework checkpoint_framework(const Checkpoint& ckpt);
/// Rebuilds the architecture from tensor names and shapes.
ModelConfig infer_model_config(const Checkpoint& ckpt);
/// A pretraining model with every parameter loaded from `ckpt`.
VideoModel load_video_model(const Checkpoint& ckpt);

}  // namespace transrank::train
