#include <array>
#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "transrank/numerics/ops.hpp"
#include "transrank/numerics/optim.hpp"
#include "transrank/numerics/random.hpp"

using namespace transrank;
using transrank::testing::gradcheck;
using transrank::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

Tensor64 t64(Shape s, std::vector<double> v) { return Tensor64(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("tensor rejects inconsistent shape and data") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshape({4}), ShapeError);
}

TEST_CASE("matmul examples") {
  Tape64 tape;
  auto id = tape.constant(t64({2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(t64({2, 2}, {1, 2, 3, 4}));
  CHECK(tape.value(ops::matmul(tape, id, m)) == t64({2, 2}, {1, 2, 3, 4}));

  auto row = tape.constant(t64({1, 2}, {1, 0}));
  auto col = tape.constant(t64({2, 1}, {0, 5}));
  CHECK(tape.value(ops::matmul(tape, row, col)) == t64({1, 1}, {0}));

  auto bad = tape.constant(t64({3, 1}, {1, 2, 3}));
  CHECK_THROWS_AS(ops::matmul(tape, m, bad), ShapeError);
}

TEST_CASE("matmul gradient of sum(a*b) is b^T broadcast") {
  auto rng = make_rng({11});
  const auto a = random_tensor({3, 4}, rng);
  const auto b = random_tensor({4, 2}, rng);
  auto f = [](Tape64& t, const std::vector<Var>& v) {
    return ops::sum(t, ops::matmul(t, v[0], v[1]));
  };
  CHECK(gradcheck(f, {a, b}) <= kGradTol);

  Tape64 tape;
  auto av = tape.input(a);
  auto bv = tape.constant(b);
  tape.backward(ops::sum(tape, ops::matmul(tape, av, bv)));
  const auto& g = tape.grad(av);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.at({i, k}) == doctest::Approx(b.at({k, 0}) + b.at({k, 1})));
    }
  }
}

TEST_CASE("conv3d identity and zero kernels") {
  auto rng = make_rng({3});
  const auto x = random_tensor({1, 3, 4, 5}, rng);
  Tape64 tape;
  auto in = tape.constant(x);
  auto one = tape.constant(t64({1, 1, 1, 1, 1}, {1.0}));
  auto out = ops::conv3d(tape, in, one, std::nullopt, {1, 1, 1}, {0, 0, 0});
  CHECK(tape.value(out) == x);

  auto zero = tape.constant(Tensor64({2, 1, 3, 3, 3}));
  auto z = ops::conv3d(tape, in, zero, std::nullopt, {1, 1, 1}, {1, 1, 1});
  CHECK(tape.value(z).shape() == Shape{2, 3, 4, 5});
  for (double v : tape.value(z).data()) CHECK(v == 0.0);
}

TEST_CASE("conv3d output extents and errors") {
  Tape64 tape;
  auto in = tape.constant(Tensor64({1, 16, 32, 32}));
  auto k = tape.constant(Tensor64({8, 1, 3, 3, 3}));
  auto out = ops::conv3d(tape, in, k, std::nullopt, {1, 2, 2}, {1, 1, 1});
  CHECK(tape.value(out).shape() == Shape{8, 16, 16, 16});

  auto small = tape.constant(Tensor64({1, 2, 2, 2}));
  CHECK_THROWS_AS(ops::conv3d(tape, small, k, std::nullopt, {1, 1, 1}, {0, 0, 0}), ShapeError);
  CHECK_THROWS_AS(ops::conv3d(tape, in, k, std::nullopt, {0, 1, 1}, {1, 1, 1}), ShapeError);
}

TEST_CASE("conv3d matches a direct nested-loop convolution") {
  auto rng = make_rng({5});
  const auto x = random_tensor({2, 5, 6, 7}, rng);
  const auto k = random_tensor({3, 2, 3, 2, 3}, rng);
  const Extent3 stride{2, 1, 2}, pad{1, 0, 1};
  const auto out = kernels::conv3d(x, k, stride, pad);
  const auto& s = out.shape();
  REQUIRE(s == Shape{3, 3, 5, 4});
  for (std::size_t co = 0; co < 3; ++co)
    for (std::size_t ot = 0; ot < s[1]; ++ot)
      for (std::size_t oh = 0; oh < s[2]; ++oh)
        for (std::size_t ow = 0; ow < s[3]; ++ow) {
          double acc = 0;
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (std::size_t kt = 0; kt < 3; ++kt)
              for (std::size_t kh = 0; kh < 2; ++kh)
                for (std::size_t kw = 0; kw < 3; ++kw) {
                  const long it = long(ot * 2 + kt) - 1, ih = long(oh + kh), iw = long(ow * 2 + kw) - 1;
                  if (it < 0 || it >= 5 || ih >= 6 || iw < 0 || iw >= 7) continue;
                  acc += k.at({co, ci, kt, kh, kw}) *
                         x.at({ci, std::size_t(it), std::size_t(ih), std::size_t(iw)});
                }
          CHECK(out.at({co, ot, oh, ow}) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv3d gradients match finite differences") {
  auto rng = make_rng({7});
  const auto x = random_tensor({2, 2, 4, 4, 4}, rng);
  const auto k = random_tensor({3, 2, 2, 2, 2}, rng);
  const auto b = random_tensor({3}, rng);
  auto f = [](Tape64& t, const std::vector<Var>& v) {
    auto y = ops::conv3d(t, v[0], v[1], v[2], {1, 2, 1}, {1, 0, 1});
    return ops::sum(t, ops::add(t, ops::scale(t, y, 0.5), ops::relu(t, y)));
  };
  CHECK(gradcheck(f, {x, k, b}) <= kGradTol);
}

TEST_CASE("relu and pooling examples") {
  Tape64 tape;
  auto x = tape.constant(t64({3}, {-1, 0, 2}));
  CHECK(tape.value(ops::relu(tape, x)) == t64({3}, {0, 0, 2}));

  auto c = tape.constant(Tensor64({4, 2, 3, 3}, 3.0));
  CHECK(tape.value(ops::global_avg_pool(tape, c)) == Tensor64({4}, 3.0));

  Tape64 t2;
  auto in = t2.input(Tensor64({2, 2, 3, 4}, 1.0));
  t2.backward(ops::sum(t2, ops::global_avg_pool(t2, in)));
  for (double g : t2.grad(in).data()) CHECK(g == doctest::Approx(1.0 / 24.0));
}

TEST_CASE("elementwise and structural ops pass gradient checks") {
  auto rng = make_rng({9});
  SUBCASE("add, scale, add_bias") {
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng),
               bias = random_tensor({4}, rng);
    auto f = [](Tape64& t, const std::vector<Var>& v) {
      auto y = ops::add_bias(t, ops::add(t, v[0], ops::scale(t, v[1], -1.7)), v[2]);
      return ops::sum(t, ops::relu(t, y));
    };
    CHECK(gradcheck(f, {a, b, bias}) <= kGradTol);
  }
  SUBCASE("concat along inner and outer axes, reshape") {
    const auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
    auto f = [](Tape64& t, const std::vector<Var>& v) {
      std::array<Var, 2> parts{v[0], v[1]};
      auto c = ops::concat(t, std::span<const Var>(parts), 1);
      auto r = ops::reshape(t, c, {4, 4});
      std::array<Var, 2> rows{r, r};
      auto d = ops::concat(t, std::span<const Var>(rows), 0);
      auto w = t.constant(t64({4, 1}, {1.0, -2.0, 0.5, 3.0}));
      return ops::sum(t, ops::relu(t, ops::matmul(t, d, w)));
    };
    CHECK(gradcheck(f, {a, b}) <= kGradTol);
  }
  SUBCASE("spatial pooling") {
    const auto x = random_tensor({2, 3, 4, 2, 3}, rng);
    auto f = [](Tape64& t, const std::vector<Var>& v) {
      auto p = ops::spatial_avg_pool(t, v[0]);
      return ops::sum(t, ops::relu(t, ops::add(t, p, ops::scale(t, p, 2.0))));
    };
    CHECK(gradcheck(f, {x}) <= kGradTol);
  }
  SUBCASE("dropout with a fixed mask") {
    const auto x = random_tensor({4, 5}, rng);
    auto f = [](Tape64& t, const std::vector<Var>& v) {
      auto r = make_rng({42});
      return ops::sum(t, ops::scale(t, ops::dropout(t, v[0], 0.5, &r), 3.0));
    };
    CHECK(gradcheck(f, {x}) <= kGradTol);
  }
}

TEST_CASE("dropout is the identity in evaluation mode and rescales in training") {
  Tape64 tape;
  auto x = tape.constant(Tensor64({1000}, 1.0));
  CHECK(tape.value(ops::dropout(tape, x, 0.5, nullptr)) == Tensor64({1000}, 1.0));
  auto rng = make_rng({1});
  const auto& y = tape.value(ops::dropout(tape, x, 0.5, &rng));
  std::size_t kept = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("two-layer network backward equals finite differences end to end") {
  // Redraw until no ReLU input sits within reach of the finite-difference step.
  std::vector<Tensor64> in;
  for (std::uint64_t seed = 13;; ++seed) {
    auto rng = make_rng({seed});
    in = {random_tensor({1, 1, 4, 6, 6}, rng), random_tensor({3, 1, 3, 3, 3}, rng),
          random_tensor({3}, rng, -0.1, 0.1), random_tensor({3, 2}, rng),
          random_tensor({2}, rng)};
    Tape64 t;
    auto pre = ops::conv3d(t, t.constant(in[0]), t.constant(in[1]), t.constant(in[2]),
                           {1, 2, 2}, {1, 1, 1});
    double closest = 1e9;
    for (double v : t.value(pre).data()) closest = std::min(closest, std::abs(v));
    if (closest > 0.02) break;
  }
  auto f = [](Tape64& t, const std::vector<Var>& v) {
    auto h = ops::relu(t, ops::conv3d(t, v[0], v[1], v[2], {1, 2, 2}, {1, 1, 1}));
    auto feat = ops::global_avg_pool(t, h);
    auto out = ops::add_bias(t, ops::matmul(t, feat, v[3]), v[4]);
    auto w = t.constant(t64({1, 2}, {1.0, -0.5}));
    std::array<Var, 2> parts{out, w};
    return ops::sum(t, ops::scale(t, ops::concat(t, std::span<const Var>(parts), 1), 2.0));
  };
  CHECK(gradcheck(f, in) <= kGradTol);
}

TEST_CASE("sgd_step examples") {
  Parameter p("p", Tensor({1}, 0.0f));
  OptimizerState st;
  st.momentum = 0;
  st.weight_decay = 0;
  Parameter* ps[] = {&p};

  p.grad[0] = 1.0f;
  sgd_step(ps, st, 0.1);
  CHECK(p.value[0] == doctest::Approx(-0.1));
  CHECK(p.grad[0] == 0.0f);

  Parameter q("q", Tensor({1}, 0.0f));
  OptimizerState mom;
  mom.momentum = 0.9;
  mom.weight_decay = 0;
  Parameter* qs[] = {&q};
  for (int i = 0; i < 2; ++i) {
    q.grad[0] = 1.0f;
    sgd_step(qs, mom, 1.0);
  }
  CHECK(q.value[0] == doctest::Approx(-2.9));

  Parameter r("r", Tensor({1}, 1.0f));
  OptimizerState decay;
  decay.momentum = 0;
  decay.weight_decay = 0.1;
  Parameter* rs[] = {&r};
  sgd_step(rs, decay, 1.0);
  CHECK(r.value[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd_step aborts on NaN gradients without mutating anything") {
  Parameter a("a", Tensor({2}, 1.0f)), b("b", Tensor({1}, 2.0f));
  a.grad[0] = 0.5f;
  b.grad[0] = std::numeric_limits<float>::quiet_NaN();
  OptimizerState st;
  Parameter* ps[] = {&a, &b};
  CHECK_THROWS_AS(sgd_step(ps, st, 0.1), NumericError);
  CHECK(a.value == Tensor({2}, 1.0f));
  CHECK(st.buffers.empty());
}

TEST_CASE("clip_grad_norm caps the joint norm and leaves small gradients alone") {
  Parameter a("a", Tensor({2}, 0.0f)), b("b", Tensor({1}, 0.0f));
  a.grad[0] = 3.0f;
  a.grad[1] = 0.0f;
  b.grad[0] = 4.0f;
  Parameter* ps[] = {&a, &b};
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == 3.0f);
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(clip_grad_norm(ps, 0.0), std::invalid_argument);
}

TEST_CASE("sgd_step with zero learning rate leaves parameters bit-identical") {
  auto rng = make_rng({21});
  Parameter p("w", glorot_uniform({4, 5}, 4, 5, rng));
  p.value[3] = -0.0f;
  const Tensor before = p.value;
  OptimizerState st;
  Parameter* ps[] = {&p};
  for (int i = 0; i < 3; ++i) {
    for (auto& g : p.grad.data()) g = 0.25f;
    sgd_step(ps, st, 0.0);
  }
  CHECK(std::memcmp(before.raw(), p.value.raw(), before.size() * sizeof(float)) == 0);
}

TEST_CASE("learning-rate schedules") {
  CHECK(lr_cosine(0.1, 0, 100) == doctest::Approx(0.1));
  CHECK(lr_cosine(0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(lr_cosine(0.1, 99, 100) == doctest::Approx(2.4671e-5).epsilon(1e-3));
  CHECK_THROWS(lr_cosine(0.1, 100, 100));

  CHECK(lr_multistep(0.16, 59, 100) == doctest::Approx(0.16));
  CHECK(lr_multistep(0.16, 60, 100) == doctest::Approx(0.016));
  CHECK(lr_multistep(0.16, 79, 100) == doctest::Approx(0.016));
  CHECK(lr_multistep(0.16, 80, 100) == doctest::Approx(0.0016));
}

TEST_CASE("glorot initialization respects its bound and is seeded") {
  auto r1 = make_rng({1, 2});
  auto r2 = make_rng({1, 2});
  const auto a = glorot_uniform({8, 1, 3, 3, 3}, 27, 216, r1);
  const auto b = glorot_uniform({8, 1, 3, 3, 3}, 27, 216, r2);
  CHECK(a == b);
  const double bound = std::sqrt(6.0 / 243.0);
  for (float v : a.data()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  auto rng = make_rng({4});
  const auto x = random_tensor({2, 1, 4, 8, 8}, rng).cast<float>();
  const auto k = random_tensor({4, 1, 3, 3, 3}, rng).cast<float>();
  auto run = [&] {
    Tape tape;
    auto out = ops::global_avg_pool(
        tape, ops::relu(tape, ops::conv3d(tape, tape.constant(x), tape.constant(k), std::nullopt,
                                          {1, 2, 2}, {1, 1, 1})));
    return tape.value(out);
  };
  CHECK(run() == run());
}

TEST_CASE("gemm matches a naive product for every transpose and the encoder's shapes") {
  auto rng = make_rng({404});
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t dims[][3] = {{8, 4096, 27},  {27, 4096, 8},  {16, 512, 216}, {216, 512, 16},
                                 {32, 64, 432},  {432, 64, 32},  {16, 216, 512}, {27, 16384, 3},
                                 {16, 16384, 27}, {2, 3, 4},     {1, 1, 1}};
  for (const auto& d : dims) {
    const std::size_t m = d[0], n = d[1], k = d[2];
    std::vector<double> a(m * k), b(k * n), ref(m * n);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        const std::size_t lda = ta ? m : k, ldb = tb ? k : n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) {
              s += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
            }
            ref[i * n + j] = s;
          }
        }
        std::vector<double> c(m * n, 7.0);
        kernels::gemm<double>(ta, tb, m, n, k, 1.0, a.data(), lda, b.data(), ldb, 0.0, c.data(), n);
        std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end()), cf(m * n, 7.0f);
        kernels::gemm<float>(ta, tb, m, n, k, 1.0f, af.data(), lda, bf.data(), ldb, 0.0f, cf.data(), n);
        double worst = 0, worst_f = 0;
        for (std::size_t i = 0; i < m * n; ++i) {
          worst = std::max(worst, std::abs(c[i] - ref[i]));
          worst_f = std::max(worst_f, std::abs(cf[i] - ref[i]) / (1 + std::abs(ref[i])));
        }
        CHECK(worst < 1e-10);
        CHECK(worst_f < 1e-4);
      }
    }
  }
}
