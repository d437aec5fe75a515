#pragma once

#include <array>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "transrank/model/checkpoint.hpp"
#include "transrank/numerics/kernels.hpp"
#include "transrank/numerics/random.hpp"
#include "transrank/numerics/tape.hpp"

namespace transrank {

inline constexpr std::size_t kStages = 3;

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t clip_length = 16;
  std::size_t frame_size = 32;
  std::array<std::size_t, kStages> channels{8, 16, 32};
  std::array<Extent3, kStages> strides{Extent3{1, 2, 2}, Extent3{2, 2, 2}, Extent3{2, 2, 2}};
  std::size_t kernel = 3;
  // Output multiplier per stage. Zero picks sqrt((fan_in + fan_out) / fan_in),
  // which turns the Glorot draw into a ReLU-preserving variance.
  std::array<double, kStages> stage_scale{0, 0, 0};

  std::size_t feature_dim() const { return channels.back(); }
  /// Temporal extent of the last stage; the probe feature is C_last × this.
  std::size_t final_length() const;
  std::size_t probe_dim() const { return feature_dim() * final_length(); }
  Shape clip_shape() const { return {in_channels, clip_length, frame_size, frame_size}; }
  double effective_scale(std::size_t stage) const;
  void validate() const;
};

enum class HeadKind { FC, MLP };

std::string head_kind_name(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

struct HeadConfig {
  HeadKind kind = HeadKind::FC;
  std::size_t in = 32;
  std::size_t hidden = 128;
  std::size_t out = 1;
};

/// Whether a forward pass records parameters as trainable leaves or binds
/// them as constants (no gradient bookkeeping, no saved im2col columns).
enum class Bind { Trainable, Frozen };

/// Stable-address parameter storage with name lookup.
template <typename T>
class ParameterStore {
 public:
  BasicParameter<T>& add(std::string name, BasicTensor<T> value);
  std::vector<BasicParameter<T>*> all();
  std::vector<const BasicParameter<T>*> all() const;
  BasicParameter<T>* find(const std::string& name);

 private:
  std::deque<BasicParameter<T>> params_;
};

template <typename T>
Var bind(BasicTape<T>& tape, BasicParameter<T>& p, Bind mode);

/// Three conv+relu stages, then global average pooling to a D-vector.
template <typename T>
class BasicEncoder {
 public:
  struct Output {
    Var feature;  // N × D
    Var probe;    // N × (D · final_length), stage-3 output pooled over space only
  };

  BasicEncoder(const EncoderConfig& cfg, Rng& rng, const std::string& prefix = "encoder");

  /// clips: N × C × L × H × W.
  Output forward(BasicTape<T>& tape, Var clips, Bind mode);

  /// Inference on one C × L × H × W clip, returns the D-vector.
  BasicTensor<T> encode(const BasicTensor<T>& clip);
  /// Inference on a batch: returns N × D features and N × probe_dim probe features.
  std::pair<BasicTensor<T>, BasicTensor<T>> encode_batch(const BasicTensor<T>& clips);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<BasicParameter<T>*> parameters() { return store_.all(); }
  std::vector<const BasicParameter<T>*> parameters() const { return store_.all(); }

 private:
  EncoderConfig cfg_;
  ParameterStore<T> store_;
  std::array<BasicParameter<T>*, kStages> weight_{};
  std::array<BasicParameter<T>*, kStages> bias_{};
};

/// FC: one affine layer. MLP: affine, ReLU, affine. Outputs are raw scores.
template <typename T>
class BasicHead {
 public:
  BasicHead(const std::string& name, const HeadConfig& cfg, Rng& rng);

  /// x: N × in → N × out.
  Var forward(BasicTape<T>& tape, Var x, Bind mode);

  const HeadConfig& config() const { return cfg_; }
  std::vector<BasicParameter<T>*> parameters() { return store_.all(); }
  std::vector<const BasicParameter<T>*> parameters() const { return store_.all(); }

 private:
  HeadConfig cfg_;
  ParameterStore<T> store_;
  std::vector<BasicParameter<T>*> layers_;  // weight, bias pairs
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadKind head = HeadKind::FC;
  std::size_t hidden = 128;
  std::size_t transforms = 3;  // M, width of the temporal head
  bool spatial = false;        // aspect-ratio and rotation heads
};

/// Pretraining model: encoder plus the temporal head and, optionally, the
/// aspect-ratio score head and the rotation head.
template <typename T>
class BasicVideoModel {
 public:
  BasicVideoModel(const ModelConfig& cfg, std::uint64_t seed);

  struct Output {
    Var feature;
    Var temporal;  // N × M
    Var aspect;    // N × 1 (only with spatial heads)
    Var rotation;  // N × 4 (only with spatial heads)
  };
  Output forward(BasicTape<T>& tape, Var clips, Bind mode);

  BasicEncoder<T>& encoder() { return encoder_; }
  const BasicEncoder<T>& encoder() const { return encoder_; }
  const ModelConfig& config() const { return cfg_; }
  std::vector<BasicParameter<T>*> parameters();
  std::vector<const BasicParameter<T>*> parameters() const;

 private:
  ModelConfig cfg_;
  Rng init_rng_;
  BasicEncoder<T> encoder_;
  BasicHead<T> temporal_;
  std::unique_ptr<BasicHead<T>> aspect_;
  std::unique_ptr<BasicHead<T>> rotation_;
};

/// Downstream model: encoder, dropout, one affine classifier.
template <typename T>
class BasicClassifier {
 public:
  BasicClassifier(const EncoderConfig& enc, std::size_t classes, std::uint64_t seed, double dropout = 0.5);

  /// With `dropout_rng` null (evaluation) dropout is the identity.
  Var forward(BasicTape<T>& tape, Var clips, Bind encoder_mode, Rng* dropout_rng);
  /// Classifier only, on precomputed N × D features.
  Var forward_features(BasicTape<T>& tape, Var features, Rng* dropout_rng);

  BasicEncoder<T>& encoder() { return encoder_; }
  BasicHead<T>& head() { return head_; }
  std::vector<BasicParameter<T>*> parameters();

 private:
  Rng init_rng_;
  BasicEncoder<T> encoder_;
  BasicHead<T> head_;
  double dropout_;
};

using Encoder = BasicEncoder<float>;
using Head = BasicHead<float>;
using VideoModel = BasicVideoModel<float>;
using Classifier = BasicClassifier<float>;

/// Copies parameter values into a checkpoint (names are kept).
template <typename T>
void export_parameters(std::span<const BasicParameter<T>* const> params, Checkpoint& ckpt);

/// Loads every parameter from the checkpoint; throws CheckpointError on a
/// missing name or a shape mismatch.
template <typename T>
void import_parameters(std::span<BasicParameter<T>* const> params, const Checkpoint& ckpt);

/// Bitwise FNV-1a over parameter names and values.
std::uint64_t parameter_checksum(std::span<const Parameter* const> params);

}  // namespace transrank
