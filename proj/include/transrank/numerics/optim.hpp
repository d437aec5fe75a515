#pragma once

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transrank/numerics/tensor.hpp"

namespace transrank {

/// SGD hyper-parameters plus one momentum buffer per parameter name.
struct OptimizerState {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, Tensor> buffers;
};

/// v ← μ·v + g + wd·θ ; θ ← θ − lr·v ; then zeroes every gradient.
/// Throws NumericError without touching anything if a gradient is not finite.
void sgd_step(std::span<Parameter* const> params, OptimizerState& state, double lr);

void zero_grads(std::span<Parameter* const> params);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// base · ½(1 + cos(π·epoch/total)).
double lr_cosine(double base, int epoch, int total);

/// base, multiplied by `factor` for every milestone (fraction of total) already reached.
double lr_multistep(double base, int epoch, int total,
                    std::span<const double> milestones = std::span<const double>(),
                    double factor = 0.1);

/// Uniform in ±sqrt(6/(fan_in+fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace transrank
