#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transrank/eval/features.hpp"
#include "transrank/eval/report.hpp"
#include "transrank/model/model.hpp"

namespace transrank::train {

enum class TransferMode { Linear, Finetune };

std::string transfer_mode_name(TransferMode mode);
TransferMode parse_transfer_mode(const std::string& text);

struct TransferConfig {
  TransferMode mode = TransferMode::Linear;
  std::size_t epochs = 30;
  std::vector<double> lr_grid{0.01, 0.02, 0.04, 0.08, 0.16};
  std::vector<double> milestones{0.6, 0.8};  // fractions of `epochs`
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double dropout = 0.5;            // finetuning only
  std::size_t batch_videos = 16;

  void validate() const;
};

struct GridPoint {
  double lr = 0;
  double accuracy = 0;
};

struct TransferReport {
  TransferMode mode = TransferMode::Linear;
  std::vector<GridPoint> grid;  // in lr_grid order
  double best_lr = 0;
  double best_accuracy = 0;     // max over the grid, selected on the test split
};

/// Affine classifier on standardized frozen clip features. Each test video
/// is predicted from the mean logits of its clips.
double linear_classifier_accuracy(const eval::ClipFeatures& train, const eval::ClipFeatures& test, double lr,
                                  const TransferConfig& cfg, std::uint64_t seed);

/// Frozen encoder, one affine classifier per grid entry.
TransferReport linear_eval(Encoder& encoder, const Dataset& train, const Dataset& test, const TransferConfig& cfg,
                           const eval::EvalConfig& eval_cfg, std::uint64_t seed, std::size_t workers = 1);

/// End-to-end training from the encoder weights in `ckpt`, once per grid entry.
TransferReport finetune(const Checkpoint& ckpt, const Dataset& train, const Dataset& test, const TransferConfig& cfg,
                        const eval::EvalConfig& eval_cfg, std::uint64_t seed, std::size_t workers = 1);

/// `accuracy@lr=<lr>` per grid entry, then best_lr and best_accuracy.
std::vector<eval::MetricRow> transfer_rows(const TransferReport& report);

}  // namespace transrank::train
