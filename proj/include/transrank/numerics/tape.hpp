#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "transrank/numerics/tensor.hpp"

namespace transrank {

/// Handle to a value recorded on a tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode operation tape. Every op appends one node holding its output
/// and a closure that pushes the output gradient into its inputs. The tape is
/// meant to be cleared after each training step.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicTape&, Var self)>;

  Var constant(TensorT value) { return push(std::move(value), false, nullptr, {}); }

  /// A leaf whose gradient can be read back with grad() after backward().
  Var input(TensorT value) { return push(std::move(value), true, nullptr, {}); }

  /// A leaf bound to a parameter; backward() adds into param.grad.
  Var parameter(BasicParameter<T>& param) {
    return push(param.value, true, &param, {});
  }

  /// Appends an op result. The closure only runs when an input requires grad.
  Var record(TensorT value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (auto v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() root w.r.t. v (zeros if never reached).
  const TensorT& grad(Var v) {
    ensure_grad(v);
    return nodes_[v.id].grad;
  }

  /// Mutable gradient buffer of an input, allocated lazily; used by closures.
  TensorT& grad_buffer(Var v) {
    ensure_grad(v);
    return nodes_[v.id].grad;
  }

  void backward(Var root) {
    auto& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw ShapeError("backward root must be a scalar, got " + shape_str(r.value.shape()));
    }
    for (auto& n : nodes_) n.has_grad = false;
    ensure_grad(root);
    nodes_[root.id].grad[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) n.backward(*this, Var{i});
      if (n.param != nullptr) {
        auto dst = n.param->grad.data();
        auto src = nodes_[i].grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    bool has_grad = false;
    BasicParameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(TensorT value, bool requires_grad, BasicParameter<T>* param, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  void ensure_grad(Var v) {
    auto& n = nodes_.at(v.id);
    if (!n.has_grad) {
      if (n.grad.shape() != n.value.shape()) {
        n.grad = TensorT(n.value.shape());
      } else {
        n.grad.fill(T{0});
      }
      n.has_grad = true;
    }
  }

  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

}  // namespace transrank
