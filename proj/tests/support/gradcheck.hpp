#pragma once

// Central finite-difference oracle used by the gradient tests. Everything
// runs in 64-bit; the analytic side comes from BasicTape::backward.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "transrank/numerics/tape.hpp"

namespace transrank::testing {

using ScalarGraph = std::function<Var(Tape64&, const std::vector<Var>&)>;

inline Tensor64 random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline double evaluate(const ScalarGraph& f, const std::vector<Tensor64>& inputs) {
  Tape64 tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return tape.value(f(tape, vars)).item();
}

/// Analytic gradients of f w.r.t. every input.
inline std::vector<Tensor64> analytic_grads(const ScalarGraph& f,
                                            const std::vector<Tensor64>& inputs) {
  Tape64 tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.input(x));
  const Var out = f(tape, vars);
  tape.backward(out);
  std::vector<Tensor64> grads;
  for (auto v : vars) grads.push_back(tape.grad(v));
  return grads;
}

inline std::vector<Tensor64> numeric_grads(const ScalarGraph& f,
                                           const std::vector<Tensor64>& inputs,
                                           double step = 1e-3) {
  std::vector<Tensor64> grads;
  auto probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor64 g(inputs[k].shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double up = evaluate(f, probe);
      probe[k][i] = orig - step;
      const double down = evaluate(f, probe);
      probe[k][i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
inline double relative_error(const Tensor64& a, const Tensor64& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Largest relative error over all inputs.
inline double gradcheck(const ScalarGraph& f, const std::vector<Tensor64>& inputs,
                        double step = 1e-3) {
  const auto a = analytic_grads(f, inputs);
  const auto n = numeric_grads(f, inputs, step);
  double worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, relative_error(a[k], n[k]));
  return worst;
}

}  // namespace transrank::testing
