#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>

#include "transrank/numerics/kernels.hpp"
#include "transrank/numerics/tape.hpp"

// Differentiable ops recorded on a BasicTape. Each returns the output handle;
// gradients are propagated by BasicTape::backward.
namespace transrank::ops {

/// [P×Q] × [Q×R] → [P×R].
template <typename T>
Var matmul(BasicTape<T>& tape, Var a, Var b);

/// Elementwise sum of two same-shaped values.
template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b);

template <typename T>
Var scale(BasicTape<T>& tape, Var x, T factor);

template <typename T>
Var relu(BasicTape<T>& tape, Var x);

/// Adds a length-R bias to every row of an N×R value.
template <typename T>
Var add_bias(BasicTape<T>& tape, Var x, Var bias);

/// 3D convolution over C×T×H×W or N×C×T×H×W input. Bias, when given, has
/// one entry per output channel.
template <typename T>
Var conv3d(BasicTape<T>& tape, Var input, Var kernel, std::optional<Var> bias, Extent3 stride,
           Extent3 padding);

/// Mean over T×H×W: C×T×H×W → C, N×C×T×H×W → N×C.
template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var x);

/// Mean over H×W only: N×C×T×H×W → N×C×T.
template <typename T>
Var spatial_avg_pool(BasicTape<T>& tape, Var x);

template <typename T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape);

/// Concatenation along `axis`; all other dims must agree.
template <typename T>
Var concat(BasicTape<T>& tape, std::span<const Var> parts, std::size_t axis);

/// Sum of all elements, rank-0 result.
template <typename T>
Var sum(BasicTape<T>& tape, Var x);

/// Inverted dropout. With rng == nullptr (evaluation) it is the identity.
template <typename T>
Var dropout(BasicTape<T>& tape, Var x, T ratio, std::mt19937_64* rng);

}  // namespace transrank::ops
