#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "transrank/losses/losses.hpp"
#include "transrank/numerics/random.hpp"

using namespace transrank;
using namespace transrank::losses;

namespace {

Tensor64 matrix(std::size_t n, std::size_t m, std::vector<double> v) { return Tensor64({n, m}, std::move(v)); }

// Brute-force pair enumeration, written independently of the library loops.
double ranking_oracle(const Tensor64& s, const std::vector<int>& t, double m) {
  double sum = 0;
  int count = 0;
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (t[i] == t[j]) continue;
      ++count;
      sum += std::max(0.0, s.at({j, static_cast<std::size_t>(t[i])}) - s.at({i, static_cast<std::size_t>(t[i])}) + m);
    }
  }
  return sum / count;
}

double cross_entropy_oracle(const Tensor64& s, const std::vector<int>& t) {
  double sum = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double z = 0;
    for (std::size_t c = 0; c < s.dim(1); ++c) z += std::exp(s.at({i, c}));
    sum += -std::log(std::exp(s.at({i, static_cast<std::size_t>(t[i])})) / z);
  }
  return sum / static_cast<double>(t.size());
}

Tensor64 random_scores(std::size_t n, std::size_t m, Rng& rng) { return testing::random_tensor({n, m}, rng, -2, 2); }

std::vector<int> random_labels(std::size_t n, int m, Rng& rng) {
  std::uniform_int_distribution<int> d(0, m - 1);
  std::vector<int> t(n);
  do {
    for (auto& x : t) x = d(rng);
  } while (std::all_of(t.begin(), t.end(), [&](int x) { return x == t[0]; }));
  return t;
}

}  // namespace

TEST_CASE("transrank loss examples") {
  const std::vector<int> t = {0, 1, 2};
  CHECK(transrank_loss(matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), std::span<const int>(t)).value == 0.0);
  CHECK(transrank_loss(Tensor64({3, 3}), std::span<const int>(t)).value == doctest::Approx(0.5));
  const std::vector<int> t2 = {0, 1};
  const auto s = matrix(2, 2, {0.3, 0.9, 0.6, 0.2});
  CHECK(transrank_loss(s, std::span<const int>(t2)).value == doctest::Approx(1.0));
  CHECK(ranking_oracle(s, t2, 0.5) == doctest::Approx(1.0));
  const std::vector<int> same = {1, 1, 1};
  CHECK_THROWS_AS(transrank_loss(Tensor64({3, 3}), std::span<const int>(same)), LossError);
  const std::vector<int> bad = {0, 3, 1};
  CHECK_THROWS_AS(transrank_loss(Tensor64({3, 3}), std::span<const int>(bad)), LossError);
  CHECK_THROWS_AS(transrank_loss(Tensor64({3, 3}), std::span<const int>(t), -0.1), LossError);
}

TEST_CASE("transrank loss matches brute-force enumeration with repeated labels") {
  auto rng = make_rng({31});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 6, m = 2 + trial % 4;
    const auto s = random_scores(n, m, rng);
    const auto t = random_labels(n, static_cast<int>(m), rng);
    CHECK(transrank_loss(s, std::span<const int>(t)).value == doctest::Approx(ranking_oracle(s, t, 0.5)));
    CHECK(transrank_loss(s, std::span<const int>(t), 0.0).value == doctest::Approx(ranking_oracle(s, t, 0.0)));
  }
}

TEST_CASE("transcls loss examples") {
  const std::vector<int> t = {0};
  CHECK(transcls_loss(Tensor64({1, 3}), std::span<const int>(t)).value == doctest::Approx(std::log(3.0)));
  CHECK(transcls_loss(matrix(1, 3, {2, 0, 0}), std::span<const int>(t)).value ==
        doctest::Approx(std::log(1 + 2 * std::exp(-2.0))));
  CHECK(std::log(1 + 2 * std::exp(-2.0)) == doctest::Approx(0.2395).epsilon(1e-3));
  // Large logits stay finite.
  const auto big = transcls_loss(matrix(1, 3, {1000, -1000, 0}), std::span<const int>(t));
  CHECK(std::isfinite(big.value));
  CHECK(big.value == doctest::Approx(0.0));
}

TEST_CASE("transcls loss matches the direct softmax formula") {
  auto rng = make_rng({32});
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_scores(4, 3, rng);
    const auto t = random_labels(4, 3, rng);
    CHECK(transcls_loss(s, std::span<const int>(t)).value == doctest::Approx(cross_entropy_oracle(s, t)));
  }
}

TEST_CASE("shift invariance differs between the ranking and classification losses") {
  auto rng = make_rng({33});
  const auto s = random_scores(4, 4, rng);
  const std::vector<int> t = {3, 1, 0, 2};
  const double rank = transrank_loss(s, std::span<const int>(t)).value;
  const double cls = transcls_loss(s, std::span<const int>(t)).value;

  auto col = s;
  for (std::size_t i = 0; i < 4; ++i) col[i * 4 + 1] += 1.7;
  CHECK(transrank_loss(col, std::span<const int>(t)).value == doctest::Approx(rank));

  auto row = s;
  for (std::size_t c = 0; c < 4; ++c) row[2 * 4 + c] += 1.7;
  CHECK(transcls_loss(row, std::span<const int>(t)).value == doctest::Approx(cls));
  // A row shift moves one clip's scores against the others.
  CHECK(transrank_loss(row, std::span<const int>(t)).value != doctest::Approx(rank));
}

TEST_CASE("losses are equivariant to joint row and label permutation") {
  auto rng = make_rng({34});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5, m = 3;
    const auto s = random_scores(n, m, rng);
    const auto t = random_labels(n, static_cast<int>(m), rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor64 ps({n, m});
    std::vector<int> pt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pt[i] = t[perm[i]];
      for (std::size_t c = 0; c < m; ++c) ps[i * m + c] = s[perm[i] * m + c];
    }
    CHECK(transrank_loss(ps, std::span<const int>(pt)).value ==
          doctest::Approx(transrank_loss(s, std::span<const int>(t)).value));
    CHECK(transcls_loss(ps, std::span<const int>(pt)).value ==
          doctest::Approx(transcls_loss(s, std::span<const int>(t)).value));
  }
}

TEST_CASE("ranking loss is zero exactly when every margin holds") {
  auto rng = make_rng({35});
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_scores(4, 4, rng);
    const std::vector<int> t = {0, 1, 2, 3};
    bool all_hold = true;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        if (i != j) all_hold = all_hold && s.at({j, i}) - s.at({i, i}) + 0.5 <= 0;
      }
    }
    const double l = transrank_loss(s, std::span<const int>(t)).value;
    CHECK(l >= 0);
    CHECK((l == 0) == all_hold);
  }
  // A well separated matrix hits the zero branch.
  const auto sep = matrix(2, 2, {2, 0, 0, 2});
  const std::vector<int> t = {0, 1};
  CHECK(transrank_loss(sep, std::span<const int>(t)).value == 0.0);
}

TEST_CASE("a multi-video batch is the mean of per-video losses") {
  auto rng = make_rng({36});
  const std::size_t videos = 4, n = 3, m = 3;
  const auto s = random_scores(videos * n, m, rng);
  std::vector<int> t;
  for (std::size_t v = 0; v < videos; ++v) {
    std::vector<int> p = {0, 1, 2};
    std::shuffle(p.begin(), p.end(), rng);
    t.insert(t.end(), p.begin(), p.end());
  }
  double mean = 0;
  for (std::size_t v = 0; v < videos; ++v) {
    Tensor64 block({n, m});
    std::copy_n(s.raw() + v * n * m, n * m, block.raw());
    mean += transrank_loss(block, std::span<const int>(t).subspan(v * n, n)).value / videos;
  }
  const auto batch = transrank_loss_grouped(s, std::span<const int>(t), n);
  CHECK(batch.value == doctest::Approx(mean));

  // Changing another video's scores never touches this video's gradient.
  auto other = s;
  for (std::size_t k = n * m; k < other.size(); ++k) other[k] += 3.0 * std::sin(static_cast<double>(k));
  const auto moved = transrank_loss_grouped(other, std::span<const int>(t), n);
  for (std::size_t k = 0; k < n * m; ++k) CHECK(moved.grad[k] == batch.grad[k]);
  CHECK_THROWS_AS(transrank_loss_grouped(s, std::span<const int>(t), 5), ShapeError);
}

TEST_CASE("spatial ranking loss examples") {
  const std::vector<double> r = {0.5, 1.0, 2.0};
  CHECK(spatial_rank_loss(Tensor64({3}, {-1, 0, 1}), std::span<const double>(r)).value == 0.0);
  CHECK(spatial_rank_loss(Tensor64({3}), std::span<const double>(r)).value == doctest::Approx(0.5));
  const std::vector<double> r2 = {1.0, 0.5};
  CHECK(spatial_rank_loss(Tensor64({2}, {0.2, 0.4}), std::span<const double>(r2)).value == doctest::Approx(0.7));
  // Tied ratios add nothing but keep the full normalizer.
  const std::vector<double> ties = {1.0, 1.0, 2.0};
  CHECK(spatial_rank_loss(Tensor64({3}), std::span<const double>(ties)).value == doctest::Approx(2.0 / 6.0));
  const std::vector<double> one = {1.0};
  CHECK_THROWS_AS(spatial_rank_loss(Tensor64({1}), std::span<const double>(one)), LossError);
}

TEST_CASE("spatial ranking loss ignores a common offset") {
  auto rng = make_rng({37});
  std::uniform_real_distribution<double> ratio(0.5, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = testing::random_tensor({6}, rng);
    std::vector<double> r(6);
    for (auto& x : r) x = ratio(rng);
    auto shifted = p;
    for (auto& x : shifted.data()) x += 4.2;
    CHECK(spatial_rank_loss(shifted, std::span<const double>(r)).value ==
          doctest::Approx(spatial_rank_loss(p, std::span<const double>(r)).value));
  }
}

TEST_CASE("rotation loss examples") {
  const std::vector<int> t = {2, 0};
  CHECK(rotation_loss(Tensor64({2, 4}), std::span<const int>(t)).value == doctest::Approx(std::log(4.0)));
  const auto saturated = matrix(2, 4, {0, 0, 10, 0, 10, 0, 0, 0});
  CHECK(rotation_loss(saturated, std::span<const int>(t)).value < 1e-3);
  auto rng = make_rng({38});
  const auto s = random_scores(2, 4, rng);
  CHECK(rotation_loss(s, std::span<const int>(t)).value == transcls_loss(s, std::span<const int>(t)).value);
  CHECK_THROWS_AS(rotation_loss(Tensor64({2, 3}), std::span<const int>(t)), ShapeError);
  const std::vector<int> bad = {4, 0};
  CHECK_THROWS_AS(rotation_loss(Tensor64({2, 4}), std::span<const int>(bad)), LossError);
}

TEST_CASE("combined loss examples") {
  const std::vector<double> zero = {0, 0}, half = {0.5, 0.5}, spatial = {0.2, 0.4};
  CHECK(combined_loss(1.0, spatial, zero) == 1.0);
  CHECK(combined_loss(1.0, spatial, half) == doctest::Approx(1.3));
  CHECK_THROWS_AS(combined_loss(1.0, spatial, std::vector<double>{0.5}), LossError);
  CHECK_THROWS_AS(combined_loss(1.0, spatial, std::vector<double>{0.5, -1}), LossError);
}

TEST_CASE("loss gradients match finite differences") {
  auto rng = make_rng({39});
  const std::vector<int> t = {2, 0, 1, 0, 1, 2};
  const std::vector<double> r = {0.6, 1.3, 0.9, 1.9, 0.7, 1.1};
  std::vector<Tensor64> worst_inputs;
  for (int trial = 0; trial < 20; ++trial) {
    // Rescale the draw until no hinge sits within the step of its kink.
    Tensor64 s, p;
    for (;;) {
      s = random_scores(6, 3, rng);
      p = testing::random_tensor({6}, rng);
      double closest = 1;
      for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t i = 0; i < 3; ++i) {
          for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t a = g * 3 + i, b = g * 3 + j;
            if (t[a] != t[b]) {
              const auto c = static_cast<std::size_t>(t[a]);
              closest = std::min(closest, std::abs(s.at({b, c}) - s.at({a, c}) + 0.5));
            }
            if (r[a] < r[b]) closest = std::min(closest, std::abs(p[a] - p[b] + 0.5));
          }
        }
      }
      if (closest > 0.01) break;
    }

    auto rank = [&](Tape64& tape, const std::vector<Var>& x) { return transrank_loss(tape, x[0], t, 3); };
    CHECK(testing::gradcheck(rank, {s}) <= 1e-3);
    auto cls = [&](Tape64& tape, const std::vector<Var>& x) { return transcls_loss(tape, x[0], t); };
    CHECK(testing::gradcheck(cls, {s}) <= 1e-3);
    auto spatial = [&](Tape64& tape, const std::vector<Var>& x) { return spatial_rank_loss(tape, x[0], r, 3); };
    CHECK(testing::gradcheck(spatial, {p}) <= 1e-3);

    // Combined: the gradient is the weighted sum of the component gradients.
    const auto rot = random_scores(6, 4, rng);
    const std::vector<int> rot_t = {0, 1, 2, 3, 1, 2};
    const std::vector<double> w = {0.5, 0.25};
    auto total = [&](Tape64& tape, const std::vector<Var>& x) {
      const Var lt = transrank_loss(tape, x[0], t, 3);
      const std::vector<Var> parts = {spatial_rank_loss(tape, x[1], r, 3), rotation_loss(tape, x[2], rot_t)};
      return combined_loss(tape, lt, parts, w);
    };
    CHECK(testing::gradcheck(total, {s, p, rot}) <= 1e-3);
    const auto g = testing::analytic_grads(total, {s, p, rot});
    const auto gp = spatial_rank_loss_grouped(p, std::span<const double>(r), 3);
    for (std::size_t k = 0; k < 6; ++k) CHECK(g[1][k] == doctest::Approx(0.5 * gp.grad[k]));
  }
}

TEST_CASE("accuracy metrics") {
  const std::vector<int> t = {0, 1};
  CHECK(ranking_accuracy(matrix(2, 2, {1, 0, 0, 1}), std::span<const int>(t), 2) == 1.0);
  CHECK(ranking_accuracy(matrix(2, 2, {0, 1, 1, 0}), std::span<const int>(t), 2) == 0.0);
  CHECK(ranking_accuracy(matrix(2, 2, {1, 1, 0, 0}), std::span<const int>(t), 2) == 0.5);
  CHECK(argmax_accuracy(matrix(2, 2, {1, 0, 1, 0}), std::span<const int>(t)) == 0.5);
}
