#include "transrank/model/model.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "transrank/numerics/ops.hpp"
#include "transrank/numerics/optim.hpp"

namespace transrank {

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw std::invalid_argument("kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
BasicTensor<T> init_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return glorot_uniform(std::move(shape), fan_in, fan_out, rng).template cast<T>();
}

}  // namespace

std::size_t EncoderConfig::final_length() const {
  std::size_t t = clip_length;
  for (const auto& s : strides) t = conv_out(t, kernel, s.t, kernel / 2);
  return t;
}

double EncoderConfig::effective_scale(std::size_t stage) const {
  if (stage_scale[stage] != 0) return stage_scale[stage];
  const std::size_t k3 = kernel * kernel * kernel;
  const double fan_in = static_cast<double>((stage == 0 ? in_channels : channels[stage - 1]) * k3);
  const double fan_out = static_cast<double>(channels[stage] * k3);
  return std::sqrt((fan_in + fan_out) / fan_in);
}

void EncoderConfig::validate() const {
  if (in_channels == 0 || clip_length == 0 || frame_size == 0) throw std::invalid_argument("empty encoder input");
  if (kernel % 2 == 0) throw std::invalid_argument("encoder kernel must be odd");
  for (std::size_t s = 0; s < kStages; ++s) {
    if (channels[s] == 0) throw std::invalid_argument("stage with zero channels");
    if (strides[s].t == 0 || strides[s].h == 0 || strides[s].w == 0) throw std::invalid_argument("zero stride");
    if (!(stage_scale[s] >= 0)) throw std::invalid_argument("stage scale must be >= 0");
  }
  final_length();
}

std::string head_kind_name(HeadKind kind) { return kind == HeadKind::FC ? "fc" : "mlp"; }

HeadKind parse_head_kind(const std::string& text) {
  if (text == "fc") return HeadKind::FC;
  if (text == "mlp") return HeadKind::MLP;
  throw std::invalid_argument("head must be 'fc' or 'mlp', got '" + text + "'");
}

template <typename T>
BasicParameter<T>& ParameterStore<T>::add(std::string name, BasicTensor<T> value) {
  return params_.emplace_back(std::move(name), std::move(value));
}

template <typename T>
std::vector<BasicParameter<T>*> ParameterStore<T>::all() {
  std::vector<BasicParameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<const BasicParameter<T>*> ParameterStore<T>::all() const {
  std::vector<const BasicParameter<T>*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
BasicParameter<T>* ParameterStore<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
Var bind(BasicTape<T>& tape, BasicParameter<T>& p, Bind mode) {
  return mode == Bind::Trainable ? tape.parameter(p) : tape.constant(p.value);
}

template <typename T>
BasicEncoder<T>::BasicEncoder(const EncoderConfig& cfg, Rng& rng, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t k = cfg_.kernel;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t cin = s == 0 ? cfg_.in_channels : cfg_.channels[s - 1];
    const std::size_t cout = cfg_.channels[s];
    const std::string name = prefix + ".conv" + std::to_string(s + 1);
    weight_[s] = &store_.add(name + ".weight", init_tensor<T>({cout, cin, k, k, k}, cin * k * k * k,
                                                              cout * k * k * k, rng));
    bias_[s] = &store_.add(name + ".bias", BasicTensor<T>({cout}));
  }
}

template <typename T>
typename BasicEncoder<T>::Output BasicEncoder<T>::forward(BasicTape<T>& tape, Var clips, Bind mode) {
  const auto& x = tape.value(clips);
  const Shape expect = cfg_.clip_shape();
  if (x.rank() != 5 || !std::equal(expect.begin(), expect.end(), x.shape().begin() + 1)) {
    throw ShapeError("encoder expects N x " + shape_str(expect) + " clips, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t pad = cfg_.kernel / 2;
  Var h = clips;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Var w = bind(tape, *weight_[s], mode);
    const Var b = bind(tape, *bias_[s], mode);
    h = ops::conv3d(tape, h, w, b, cfg_.strides[s], Extent3{pad, pad, pad});
    h = ops::relu(tape, ops::scale(tape, h, static_cast<T>(cfg_.effective_scale(s))));
  }
  Output out;
  out.feature = ops::global_avg_pool(tape, h);
  out.probe = ops::reshape(tape, ops::spatial_avg_pool(tape, h), Shape{n, cfg_.probe_dim()});
  return out;
}

template <typename T>
BasicTensor<T> BasicEncoder<T>::encode(const BasicTensor<T>& clip) {
  Shape batched = clip.shape();
  batched.insert(batched.begin(), 1);
  auto [feature, probe] = encode_batch(clip.reshaped(batched));
  return feature.reshaped({cfg_.feature_dim()});
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> BasicEncoder<T>::encode_batch(const BasicTensor<T>& clips) {
  BasicTape<T> tape;
  const auto out = forward(tape, tape.constant(clips), Bind::Frozen);
  return {tape.value(out.feature), tape.value(out.probe)};
}

template <typename T>
BasicHead<T>::BasicHead(const std::string& name, const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.in == 0 || cfg.out == 0 || (cfg.kind == HeadKind::MLP && cfg.hidden == 0)) {
    throw std::invalid_argument("head '" + name + "' has an empty layer");
  }
  auto layer = [&](const std::string& lname, std::size_t in, std::size_t out) {
    layers_.push_back(&store_.add(name + "." + lname + ".weight", init_tensor<T>({in, out}, in, out, rng)));
    layers_.push_back(&store_.add(name + "." + lname + ".bias", BasicTensor<T>({out})));
  };
  if (cfg.kind == HeadKind::FC) {
    layer("fc", cfg.in, cfg.out);
  } else {
    layer("fc1", cfg.in, cfg.hidden);
    layer("fc2", cfg.hidden, cfg.out);
  }
}

template <typename T>
Var BasicHead<T>::forward(BasicTape<T>& tape, Var x, Bind mode) {
  const auto& v = tape.value(x);
  if (v.rank() != 2 || v.dim(1) != cfg_.in) {
    throw ShapeError("head expects N x " + std::to_string(cfg_.in) + ", got " + shape_str(v.shape()));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); i += 2) {
    if (i > 0) h = ops::relu(tape, h);
    h = ops::add_bias(tape, ops::matmul(tape, h, bind(tape, *layers_[i], mode)), bind(tape, *layers_[i + 1], mode));
  }
  return h;
}

template <typename T>
BasicVideoModel<T>::BasicVideoModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      init_rng_(make_rng({seed, tag(Stream::kInit)})),
      encoder_(cfg.encoder, init_rng_),
      temporal_("temporal", {cfg.head, cfg.encoder.feature_dim(), cfg.hidden, cfg.transforms}, init_rng_) {
  if (cfg.transforms < 2) throw std::invalid_argument("the temporal head needs at least two transforms");
  if (cfg.spatial) {
    aspect_ = std::make_unique<BasicHead<T>>(
        "aspect", HeadConfig{cfg.head, cfg.encoder.feature_dim(), cfg.hidden, 1}, init_rng_);
    rotation_ = std::make_unique<BasicHead<T>>(
        "rotation", HeadConfig{cfg.head, cfg.encoder.feature_dim(), cfg.hidden, 4}, init_rng_);
  }
}

template <typename T>
typename BasicVideoModel<T>::Output BasicVideoModel<T>::forward(BasicTape<T>& tape, Var clips, Bind mode) {
  Output out;
  out.feature = encoder_.forward(tape, clips, mode).feature;
  out.temporal = temporal_.forward(tape, out.feature, mode);
  if (aspect_) {
    out.aspect = aspect_->forward(tape, out.feature, mode);
    out.rotation = rotation_->forward(tape, out.feature, mode);
  }
  return out;
}

template <typename T>
std::vector<BasicParameter<T>*> BasicVideoModel<T>::parameters() {
  auto out = encoder_.parameters();
  for (auto* p : temporal_.parameters()) out.push_back(p);
  for (const auto& head : {aspect_.get(), rotation_.get()}) {
    if (head == nullptr) continue;
    for (auto* p : head->parameters()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<const BasicParameter<T>*> BasicVideoModel<T>::parameters() const {
  auto mutable_params = const_cast<BasicVideoModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
BasicClassifier<T>::BasicClassifier(const EncoderConfig& enc, std::size_t classes, std::uint64_t seed, double dropout)
    : init_rng_(make_rng({seed, tag(Stream::kInit), 1})),
      encoder_(enc, init_rng_),
      head_("classifier", {HeadKind::FC, enc.feature_dim(), 0, classes}, init_rng_),
      dropout_(dropout) {
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("dropout ratio must be in [0, 1)");
}

template <typename T>
Var BasicClassifier<T>::forward(BasicTape<T>& tape, Var clips, Bind encoder_mode, Rng* dropout_rng) {
  return forward_features(tape, encoder_.forward(tape, clips, encoder_mode).feature, dropout_rng);
}

template <typename T>
Var BasicClassifier<T>::forward_features(BasicTape<T>& tape, Var features, Rng* dropout_rng) {
  const Var h = ops::dropout(tape, features, static_cast<T>(dropout_), dropout_rng);
  return head_.forward(tape, h, Bind::Trainable);
}

template <typename T>
std::vector<BasicParameter<T>*> BasicClassifier<T>::parameters() {
  auto out = encoder_.parameters();
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
void export_parameters(std::span<const BasicParameter<T>* const> params, Checkpoint& ckpt) {
  for (const auto* p : params) ckpt.set(p->name, p->value.template cast<float>());
}

template <typename T>
void import_parameters(std::span<BasicParameter<T>* const> params, const Checkpoint& ckpt) {
  for (auto* p : params) {
    const Tensor& t = ckpt.at(p->name);
    if (t.shape() != p->value.shape()) {
      throw CheckpointError("'" + p->name + "' has shape " + shape_str(t.shape()) + ", the model expects " +
                            shape_str(p->value.shape()));
    }
    p->value = t.template cast<T>();
  }
}

std::uint64_t parameter_checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (const auto* p : params) {
    for (char c : p->name) mix(static_cast<std::uint8_t>(c));
    for (float v : p->value.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return h;
}

#define TRANSRANK_MODEL(T)                                                                      \
  template class ParameterStore<T>;                                                             \
  template Var bind(BasicTape<T>&, BasicParameter<T>&, Bind);                                   \
  template class BasicEncoder<T>;                                                               \
  template class BasicHead<T>;                                                                  \
  template class BasicVideoModel<T>;                                                            \
  template class BasicClassifier<T>;                                                            \
  template void export_parameters(std::span<const BasicParameter<T>* const>, Checkpoint&);      \
  template void import_parameters(std::span<BasicParameter<T>* const>, const Checkpoint&);

TRANSRANK_MODEL(float)
TRANSRANK_MODEL(double)

}  // namespace transrank
