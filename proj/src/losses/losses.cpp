#include "transrank/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace transrank::losses {

namespace {

template <typename T>
void check_matrix(const BasicTensor<T>& s, std::size_t labels, const char* what) {
  if (s.rank() != 2) throw ShapeError(std::string(what) + " expects an N x M score matrix");
  if (s.dim(0) != labels) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels) + " labels for " +
                     std::to_string(s.dim(0)) + " rows");
  }
}

void check_labels(std::span<const int> labels, std::size_t columns) {
  for (int t : labels) {
    if (t < 0 || static_cast<std::size_t>(t) >= columns) {
      throw LossError("label " + std::to_string(t) + " outside [0, " + std::to_string(columns) + ")");
    }
  }
}

void check_groups(std::size_t rows, std::size_t group) {
  if (group == 0 || rows % group != 0) {
    throw ShapeError(std::to_string(rows) + " rows do not split into groups of " + std::to_string(group));
  }
}

// Loss over rows [row0, row0 + n); gradient is accumulated with `weight`.
template <typename T>
double rank_block(const BasicTensor<T>& s, std::span<const int> t, std::size_t row0, std::size_t n,
                  double m, double weight, BasicTensor<T>& grad) {
  const std::size_t cols = s.dim(1);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) pairs += t[row0 + i] != t[row0 + j];
  }
  if (pairs == 0) throw LossError("ranking loss needs two clips with different transforms");
  const double inv = 1.0 / static_cast<double>(pairs);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ti = static_cast<std::size_t>(t[row0 + i]);
    const double own = s[(row0 + i) * cols + ti];
    for (std::size_t j = 0; j < n; ++j) {
      if (t[row0 + j] == t[row0 + i]) continue;
      const double h = s[(row0 + j) * cols + ti] - own + m;
      if (h > 0) {
        total += h;
        grad[(row0 + j) * cols + ti] += static_cast<T>(weight * inv);
        grad[(row0 + i) * cols + ti] -= static_cast<T>(weight * inv);
      }
    }
  }
  return total * inv;
}

template <typename T>
double spatial_block(const BasicTensor<T>& p, std::span<const double> r, std::size_t row0, std::size_t n,
                     double m, double weight, BasicTensor<T>& grad) {
  if (n < 2) throw LossError("spatial ranking needs at least two clips");
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!(r[row0 + i] < r[row0 + j])) continue;
      const double h = static_cast<double>(p[row0 + i]) - static_cast<double>(p[row0 + j]) + m;
      if (h > 0) {
        total += h;
        grad[row0 + i] += static_cast<T>(weight / pairs);
        grad[row0 + j] -= static_cast<T>(weight / pairs);
      }
    }
  }
  return total / pairs;
}

void check_margin(double m) {
  if (!(m >= 0) || !std::isfinite(m)) throw LossError("margin must be a finite value >= 0");
}

template <typename T>
void check_vector(const BasicTensor<T>& p, std::size_t n) {
  if (p.rank() != 1 || p.dim(0) != n) {
    throw ShapeError("expected " + std::to_string(n) + " predicted scores, got " + shape_str(p.shape()));
  }
}

// Wraps a pure loss as a tape op; `fn` recomputes value and gradient from the
// input value.
template <typename T, typename Fn>
Var record_loss(BasicTape<T>& tape, Var x, Fn fn) {
  auto result = fn(tape.value(x));
  auto grad = std::make_shared<BasicTensor<T>>(std::move(result.grad));
  return tape.record(BasicTensor<T>::scalar(result.value), {x}, [x, grad](BasicTape<T>& tp, Var self) {
    const T g = tp.grad(self)[0];
    auto& dst = tp.grad_buffer(x);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g * (*grad)[k];
  });
}

}  // namespace

template <typename T>
LossResult<T> transrank_loss(const BasicTensor<T>& scores, std::span<const int> labels, double margin) {
  return transrank_loss_grouped(scores, labels, labels.size(), margin);
}

template <typename T>
LossResult<T> transrank_loss_grouped(const BasicTensor<T>& scores, std::span<const int> labels,
                                     std::size_t group, double margin) {
  check_matrix(scores, labels.size(), "transrank_loss");
  check_labels(labels, scores.dim(1));
  check_groups(scores.dim(0), group);
  check_margin(margin);
  LossResult<T> out{T{}, BasicTensor<T>(scores.shape())};
  const std::size_t groups = scores.dim(0) / group;
  const double w = 1.0 / static_cast<double>(groups);
  double total = 0;
  for (std::size_t g = 0; g < groups; ++g) total += rank_block(scores, labels, g * group, group, margin, w, out.grad);
  out.value = static_cast<T>(total * w);
  return out;
}

template <typename T>
LossResult<T> transcls_loss(const BasicTensor<T>& scores, std::span<const int> labels) {
  check_matrix(scores, labels.size(), "transcls_loss");
  check_labels(labels, scores.dim(1));
  const std::size_t n = scores.dim(0), cols = scores.dim(1);
  if (n == 0) throw LossError("cross-entropy over an empty batch");
  LossResult<T> out{T{}, BasicTensor<T>(scores.shape())};
  const double inv = 1.0 / static_cast<double>(n);
  double total = 0;
  std::vector<double> p(cols);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.raw() + i * cols;
    const double peak = *std::max_element(row, row + cols);
    double z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (p[c] = std::exp(static_cast<double>(row[c]) - peak));
    const auto t = static_cast<std::size_t>(labels[i]);
    // Grouping the score difference keeps the term exactly invariant to a row shift.
    total += std::log(z) + (peak - static_cast<double>(row[t]));
    for (std::size_t c = 0; c < cols; ++c) {
      out.grad[i * cols + c] = static_cast<T>(inv * (p[c] / z - (c == t ? 1.0 : 0.0)));
    }
  }
  out.value = static_cast<T>(total * inv);
  return out;
}

template <typename T>
LossResult<T> spatial_rank_loss(const BasicTensor<T>& predicted, std::span<const double> ratios, double margin) {
  return spatial_rank_loss_grouped(predicted, ratios, ratios.size(), margin);
}

template <typename T>
LossResult<T> spatial_rank_loss_grouped(const BasicTensor<T>& predicted, std::span<const double> ratios,
                                        std::size_t group, double margin) {
  check_vector(predicted, ratios.size());
  check_groups(ratios.size(), group);
  check_margin(margin);
  LossResult<T> out{T{}, BasicTensor<T>(predicted.shape())};
  const std::size_t groups = ratios.size() / group;
  const double w = 1.0 / static_cast<double>(groups);
  double total = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    total += spatial_block(predicted, ratios, g * group, group, margin, w, out.grad);
  }
  out.value = static_cast<T>(total * w);
  return out;
}

template <typename T>
LossResult<T> rotation_loss(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != 4) {
    throw ShapeError("rotation logits must be N x 4, got " + shape_str(logits.shape()));
  }
  return transcls_loss(logits, labels);
}

double combined_loss(double temporal, std::span<const double> spatial, std::span<const double> weights) {
  if (spatial.size() != weights.size()) throw LossError("one weight per spatial term is required");
  double total = temporal;
  for (std::size_t i = 0; i < spatial.size(); ++i) {
    if (!(weights[i] >= 0)) throw LossError("loss weights must be >= 0");
    total += weights[i] * spatial[i];
  }
  return total;
}

template <typename T>
Var transrank_loss(BasicTape<T>& tape, Var scores, std::vector<int> labels, std::size_t group, double margin) {
  return record_loss(tape, scores, [&](const BasicTensor<T>& s) {
    return transrank_loss_grouped(s, std::span<const int>(labels), group, margin);
  });
}

template <typename T>
Var transcls_loss(BasicTape<T>& tape, Var scores, std::vector<int> labels) {
  return record_loss(tape, scores,
                     [&](const BasicTensor<T>& s) { return transcls_loss(s, std::span<const int>(labels)); });
}

template <typename T>
Var spatial_rank_loss(BasicTape<T>& tape, Var predicted, std::vector<double> ratios, std::size_t group,
                      double margin) {
  return record_loss(tape, predicted, [&](const BasicTensor<T>& p) {
    return spatial_rank_loss_grouped(p, std::span<const double>(ratios), group, margin);
  });
}

template <typename T>
Var rotation_loss(BasicTape<T>& tape, Var logits, std::vector<int> labels) {
  return record_loss(tape, logits,
                     [&](const BasicTensor<T>& s) { return rotation_loss(s, std::span<const int>(labels)); });
}

template <typename T>
Var combined_loss(BasicTape<T>& tape, Var temporal, std::span<const Var> spatial, std::span<const double> weights) {
  if (spatial.size() != weights.size()) throw LossError("one weight per spatial term is required");
  std::vector<Var> inputs{temporal};
  inputs.insert(inputs.end(), spatial.begin(), spatial.end());
  std::vector<double> spatial_values;
  for (auto v : spatial) spatial_values.push_back(static_cast<double>(tape.value(v).item()));
  const double value = combined_loss(static_cast<double>(tape.value(temporal).item()), spatial_values, weights);
  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(BasicTensor<T>::scalar(static_cast<T>(value)), inputs,
                     [inputs, w](BasicTape<T>& tp, Var self) {
                       const T g = tp.grad(self)[0];
                       tp.grad_buffer(inputs[0])[0] += g;
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         tp.grad_buffer(inputs[i + 1])[0] += g * static_cast<T>(w[i]);
                       }
                     });
}

template <typename T>
double ranking_accuracy(const BasicTensor<T>& scores, std::span<const int> labels, std::size_t group) {
  check_matrix(scores, labels.size(), "ranking_accuracy");
  check_labels(labels, scores.dim(1));
  check_groups(scores.dim(0), group);
  const std::size_t cols = scores.dim(1);
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t g0 = 0; g0 < scores.dim(0); g0 += group) {
    std::size_t pairs = 0, right = 0;
    for (std::size_t i = g0; i < g0 + group; ++i) {
      const auto ti = static_cast<std::size_t>(labels[i]);
      for (std::size_t j = g0; j < g0 + group; ++j) {
        if (labels[j] == labels[i]) continue;
        ++pairs;
        right += scores[i * cols + ti] > scores[j * cols + ti];
      }
    }
    if (pairs > 0) {
      sum += static_cast<double>(right) / static_cast<double>(pairs);
      ++counted;
    }
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

template <typename T>
double argmax_accuracy(const BasicTensor<T>& scores, std::span<const int> labels) {
  check_matrix(scores, labels.size(), "argmax_accuracy");
  const std::size_t cols = scores.dim(1);
  if (labels.empty()) return 0.0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = scores.raw() + i * cols;
    right += static_cast<int>(std::max_element(row, row + cols) - row) == labels[i];
  }
  return static_cast<double>(right) / static_cast<double>(labels.size());
}

#define TRANSRANK_LOSSES(T)                                                                              \
  template LossResult<T> transrank_loss(const BasicTensor<T>&, std::span<const int>, double);           \
  template LossResult<T> transcls_loss(const BasicTensor<T>&, std::span<const int>);                    \
  template LossResult<T> spatial_rank_loss(const BasicTensor<T>&, std::span<const double>, double);     \
  template LossResult<T> rotation_loss(const BasicTensor<T>&, std::span<const int>);                    \
  template LossResult<T> transrank_loss_grouped(const BasicTensor<T>&, std::span<const int>, std::size_t, \
                                                double);                                                \
  template LossResult<T> spatial_rank_loss_grouped(const BasicTensor<T>&, std::span<const double>,      \
                                                   std::size_t, double);                                \
  template Var transrank_loss(BasicTape<T>&, Var, std::vector<int>, std::size_t, double);               \
  template Var transcls_loss(BasicTape<T>&, Var, std::vector<int>);                                     \
  template Var spatial_rank_loss(BasicTape<T>&, Var, std::vector<double>, std::size_t, double);         \
  template Var rotation_loss(BasicTape<T>&, Var, std::vector<int>);                                     \
  template Var combined_loss(BasicTape<T>&, Var, std::span<const Var>, std::span<const double>);        \
  template double ranking_accuracy(const BasicTensor<T>&, std::span<const int>, std::size_t);           \
  template double argmax_accuracy(const BasicTensor<T>&, std::span<const int>);

TRANSRANK_LOSSES(float)
TRANSRANK_LOSSES(double)

}  // namespace transrank::losses
