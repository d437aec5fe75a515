#pragma once

// Training objectives. Each loss exists twice: a pure function returning the
// value and its gradient w.r.t. the scores, and a tape op wrapping it.
// Transform and rotation labels are 0-based column indices.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "transrank/numerics/tape.hpp"

namespace transrank::losses {

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultMargin = 0.5;
inline constexpr double kDefaultSpatialWeight = 0.5;

template <typename T>
struct LossResult {
  T value{};
  BasicTensor<T> grad;  // same shape as the scores
};

/// Margin ranking over clip pairs with different transforms:
/// mean over i,j with t_i != t_j of max(0, s[j][t_i] - s[i][t_i] + m).
/// S is N×M; throws when all labels are equal.
template <typename T>
LossResult<T> transrank_loss(const BasicTensor<T>& scores, std::span<const int> labels,
                             double margin = kDefaultMargin);

/// Mean softmax cross-entropy of each row against its label.
template <typename T>
LossResult<T> transcls_loss(const BasicTensor<T>& scores, std::span<const int> labels);

/// Pairwise ranking of predicted r' against the true aspect ratios r:
/// 2/(N(N-1)) * sum over r_i < r_j of max(0, r'_i - r'_j + m). Ties add no term.
template <typename T>
LossResult<T> spatial_rank_loss(const BasicTensor<T>& predicted, std::span<const double> ratios,
                                double margin = kDefaultMargin);

/// Four-way rotation classification (cross-entropy over N×4 logits).
template <typename T>
LossResult<T> rotation_loss(const BasicTensor<T>& logits, std::span<const int> labels);

/// Rows come in consecutive groups of `group` clips from one video; the result
/// is the mean of the per-group losses. No term mixes two groups.
template <typename T>
LossResult<T> transrank_loss_grouped(const BasicTensor<T>& scores, std::span<const int> labels,
                                     std::size_t group, double margin = kDefaultMargin);

template <typename T>
LossResult<T> spatial_rank_loss_grouped(const BasicTensor<T>& predicted, std::span<const double> ratios,
                                        std::size_t group, double margin = kDefaultMargin);

/// L = temporal + sum_i weight_i * spatial_i.
double combined_loss(double temporal, std::span<const double> spatial, std::span<const double> weights);

// Tape ops. Each returns a rank-0 value whose gradient flows into the scores.

template <typename T>
Var transrank_loss(BasicTape<T>& tape, Var scores, std::vector<int> labels, std::size_t group,
                   double margin = kDefaultMargin);

template <typename T>
Var transcls_loss(BasicTape<T>& tape, Var scores, std::vector<int> labels);

template <typename T>
Var spatial_rank_loss(BasicTape<T>& tape, Var predicted, std::vector<double> ratios, std::size_t group,
                      double margin = kDefaultMargin);

template <typename T>
Var rotation_loss(BasicTape<T>& tape, Var logits, std::vector<int> labels);

template <typename T>
Var combined_loss(BasicTape<T>& tape, Var temporal, std::span<const Var> spatial,
                  std::span<const double> weights);

// Metrics over a score matrix.

/// Fraction of cross-transform pairs ranked correctly at margin 0, per group,
/// averaged over groups.
template <typename T>
double ranking_accuracy(const BasicTensor<T>& scores, std::span<const int> labels, std::size_t group);

/// Fraction of rows whose argmax equals the label.
template <typename T>
double argmax_accuracy(const BasicTensor<T>& scores, std::span<const int> labels);

}  // namespace transrank::losses
