#include "transrank/numerics/optim.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace transrank {

namespace {
constexpr std::array<double, 2> kDefaultMilestones = {0.6, 0.8};
}

void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("max_norm must be positive");
  double sq = 0;
  for (const auto* p : params) {
    for (float g : p->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto k = static_cast<float>(max_norm / norm);
    for (auto* p : params) {
      for (float& g : p->grad.data()) g *= k;
    }
  }
  return norm;
}

void sgd_step(std::span<Parameter* const> params, OptimizerState& state, double lr) {
  for (const auto* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  const auto mu = static_cast<float>(state.momentum);
  const auto wd = static_cast<float>(state.weight_decay);
  const auto step = static_cast<float>(lr);
  for (auto* p : params) {
    auto [it, inserted] = state.buffers.try_emplace(p->name, p->value.shape());
    auto& buf = it->second;
    if (buf.shape() != p->value.shape()) {
      throw ShapeError("momentum buffer shape mismatch for '" + p->name + "'");
    }
    auto v = buf.data();
    auto theta = p->value.data();
    auto g = p->grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
    }
    if (step != 0.0f) {
      for (std::size_t i = 0; i < v.size(); ++i) theta[i] -= step * v[i];
    }
    p->zero_grad();
  }
}

double lr_cosine(double base, int epoch, int total) {
  if (total <= 0 || epoch < 0 || epoch >= total) {
    throw std::out_of_range("lr_cosine requires 0 <= epoch < total");
  }
  return base * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total)));
}

double lr_multistep(double base, int epoch, int total, std::span<const double> milestones,
                    double factor) {
  if (total <= 0 || epoch < 0 || epoch >= total) {
    throw std::out_of_range("lr_multistep requires 0 <= epoch < total");
  }
  if (milestones.empty()) milestones = kDefaultMilestones;
  double lr = base;
  for (double m : milestones) {
    if (epoch >= std::lround(m * total)) lr *= factor;
  }
  return lr;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<float>(dist(rng));
  return out;
}

}  // namespace transrank
