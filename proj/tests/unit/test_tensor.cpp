#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "voxelseg/error.hpp"
#include "voxelseg/tensor.hpp"

using namespace voxelseg;
using namespace voxelseg::ad;

namespace {

Tensor random_tensor(RngStream& rng, Shape shape, bool grad = true, double lo = -1, double hi = 1) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), oracle::random_values(rng, n, lo, hi), grad);
}

// Checks d(sum(w * f(inputs)))/d input against central differences for every
// input, using a random projection w so the check sees every output.
void check_grad(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs, RngStream& rng,
                double tol = 1e-4) {
  const Tensor probe = f(inputs);
  const Tensor w(probe.shape(), oracle::random_values(rng, probe.size()));
  auto scalar = [&] {
    const Tensor y = f(inputs);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w.data()[i] * y.data()[i];
    return s;
  };
  for (auto& t : inputs) t.zero_grad();
  sum(mul(f(inputs), w)).backward();
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.size(), 0.0);
    const auto numeric = oracle::numeric_grad(scalar, t.mutable_data());
    CHECK(oracle::max_rel_err(analytic, numeric) < tol);
  }
}

}  // namespace

TEST_CASE("scalar examples") {
  Tensor x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == 6.0);

  Tensor d = Tensor::scalar(2.0, true);
  mul(add(d, d), d).backward();
  CHECK(d.grad()[0] == 8.0);

  Tensor z = Tensor::scalar(0.0, true);
  const Tensor s = sigmoid(z);
  CHECK(s.item() == 0.5);
  s.backward();
  CHECK(z.grad()[0] == 0.25);

  Tensor r({3}, {2.0, -1.0, 0.0}, true);
  sum(relu(r)).backward();
  CHECK(std::vector<double>(r.grad().begin(), r.grad().end()) == std::vector<double>{1, 0, 0});

  Tensor ones = Tensor::full({5}, 1.0, true);
  const Tensor total = sum(ones);
  CHECK(total.item() == 5.0);
  total.backward();
  CHECK(std::vector<double>(ones.grad().begin(), ones.grad().end()) == std::vector<double>(5, 1.0));
}

TEST_CASE("backward accumulates across calls and needs a scalar root") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  y.backward();
  y.backward();
  CHECK(x.grad()[0] == 12.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
  Tensor v = Tensor::full({2}, 1.0, true);
  try {
    mul(v, v).backward();
    FAIL("expected NonScalarRoot");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonScalarRoot);
  }
}

TEST_CASE("no broadcasting") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), Error);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 1}), Tensor::zeros({2})), Error);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {5}), Error);
}

TEST_CASE("sigmoid is stable at the extremes") {
  const Tensor s = sigmoid(Tensor({2}, {-800.0, 800.0}));
  CHECK(s.data()[0] == 0.0);
  CHECK(s.data()[1] == 1.0);
}

TEST_CASE("NoGradGuard records no tape") {
  Tensor x = Tensor::scalar(1.0, true);
  {
    NoGradGuard guard;
    CHECK(mul(x, x).is_leaf());
  }
  CHECK_FALSE(mul(x, x).is_leaf());
}

TEST_CASE("elementwise and reduction gradients") {
  RngStream rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{2, 3, 4};
    // Keep relu/prelu inputs away from the kink so differences stay one-sided.
    auto away = [&] {
      Tensor t = random_tensor(rng, s);
      for (double& v : t.mutable_data()) v += v >= 0 ? 0.05 : -0.05;
      return t;
    };
    check_grad([](auto& in) { return add(in[0], in[1]); }, {random_tensor(rng, s), random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return sub(in[0], in[1]); }, {random_tensor(rng, s), random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return mul(in[0], in[1]); }, {random_tensor(rng, s), random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return add_scalar(in[0], 0.3); }, {random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return mul_scalar(in[0], -1.7); }, {random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return relu(in[0]); }, {away()}, rng);
    check_grad([](auto& in) { return prelu(in[0], in[1]); }, {away(), random_tensor(rng, {1})}, rng);
    check_grad([](auto& in) { return sigmoid(in[0]); }, {random_tensor(rng, s, true, -4, 4)}, rng);
    check_grad([](auto& in) { return sum(in[0]); }, {random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return mean(in[0]); }, {random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return reshape(in[0], {4, 6}); }, {random_tensor(rng, s)}, rng);
    check_grad([](auto& in) { return concat_channels(in[0], in[1]); },
               {random_tensor(rng, {2, 1, 2, 2, 3}), random_tensor(rng, {2, 3, 2, 2, 3})}, rng);
  }
}

TEST_CASE("conv3d matches the direct oracle across paths") {
  RngStream rng(31);
  struct Case {
    Shape x, k;
    Triple s, p;
  };
  std::vector<Case> cases = {
      {{1, 1, 4, 4, 4}, {1, 1, 3, 3, 3}, {1, 1, 1}, {1, 1, 1}},
      {{2, 3, 5, 6, 17}, {5, 3, 3, 3, 3}, {1, 1, 1}, {1, 1, 1}},   // stride-1 fast path, ragged width
      {{1, 2, 6, 7, 9}, {9, 2, 3, 1, 5}, {1, 1, 1}, {0, 0, 2}},    // anisotropic kernel
      {{2, 4, 8, 8, 8}, {6, 4, 2, 2, 2}, {2, 2, 2}, {0, 0, 0}},    // patchify path
      {{1, 2, 7, 6, 5}, {3, 2, 3, 3, 3}, {2, 1, 3}, {1, 0, 2}},    // general fallback
      {{1, 16, 8, 8, 24}, {8, 16, 1, 1, 1}, {1, 1, 1}, {0, 0, 0}}, // pointwise
  };
  for (int r = 0; r < 10; ++r) {
    const std::size_t C = 1 + rng.uniform_index(4), F = 1 + rng.uniform_index(9);
    Shape x{1 + rng.uniform_index(2), C, 3 + rng.uniform_index(6), 3 + rng.uniform_index(6), 3 + rng.uniform_index(20)};
    Shape k{F, C, 1 + 2 * rng.uniform_index(2), 1 + 2 * rng.uniform_index(2), 1 + 2 * rng.uniform_index(2)};
    cases.push_back({x, k, {1, 1, 1}, {k[2] / 2, k[3] / 2, k[4] / 2}});
  }
  for (const auto& c : cases) {
    const Tensor x = random_tensor(rng, c.x, false);
    const Tensor k = random_tensor(rng, c.k, false);
    const Tensor b = random_tensor(rng, {c.k[0]}, false);
    const Tensor y = conv3d(x, k, b, c.s, c.p);
    Shape ys;
    const auto ref = oracle::naive_conv3d({x.data().begin(), x.data().end()}, c.x, {k.data().begin(), k.data().end()}, c.k,
                                          {b.data().begin(), b.data().end()}, c.s, c.p, ys);
    CHECK(y.shape() == ys);
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.data()[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv3d gradients match finite differences") {
  RngStream rng(32);
  check_grad([](auto& in) { return conv3d(in[0], in[1], in[2], {1, 1, 1}, {1, 1, 1}); },
             {random_tensor(rng, {1, 1, 4, 4, 4}), random_tensor(rng, {1, 1, 3, 3, 3}), random_tensor(rng, {1})}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.uniform_index(3), F = 1 + rng.uniform_index(4);
    const bool strided = trial % 3 == 2;
    const Triple s = strided ? Triple{2, 1, 2} : Triple{1, 1, 1};
    const Triple p{rng.uniform_index(2), rng.uniform_index(2), rng.uniform_index(2)};
    check_grad([&](auto& in) { return conv3d(in[0], in[1], in[2], s, p); },
               {random_tensor(rng, {1 + rng.uniform_index(2), C, 4, 5, 3 + rng.uniform_index(10)}),
                random_tensor(rng, {F, C, 3, 1 + 2 * rng.uniform_index(2), 3}), random_tensor(rng, {F})},
               rng);
  }
}

TEST_CASE("conv3d_down") {
  RngStream rng(33);
  const Tensor x = random_tensor(rng, {1, 2, 32, 32, 32}, false);
  CHECK(conv3d_down(x, random_tensor(rng, {4, 2, 2, 2, 2}, false), Tensor()).shape() == Shape{1, 4, 16, 16, 16});

  const Tensor c = Tensor::full({1, 1, 4, 6, 8}, 0.37);
  const Tensor avg = conv3d_down(c, Tensor::full({1, 1, 2, 2, 2}, 1.0 / 8), Tensor());
  for (double v : avg.data()) CHECK(std::abs(v - 0.37) < 1e-15);

  try {
    conv3d_down(Tensor::zeros({1, 1, 15, 15, 15}), Tensor::zeros({1, 1, 2, 2, 2}), Tensor());
    FAIL("expected OddExtent");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OddExtent);
  }
  CHECK_THROWS_AS(conv3d_down(Tensor::zeros({1, 1, 4, 4, 4}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor()), Error);

  for (int trial = 0; trial < 20; ++trial)
    check_grad([](auto& in) { return conv3d_down(in[0], in[1], in[2]); },
               {random_tensor(rng, {2, 3, 4, 2, 6}), random_tensor(rng, {2, 3, 2, 2, 2}), random_tensor(rng, {2})}, rng);
}

TEST_CASE("identity and zero kernels") {
  RngStream rng(34);
  const Tensor x = random_tensor(rng, {1, 1, 5, 6, 7}, true);
  std::vector<double> delta(27, 0.0);
  delta[13] = 1.0;
  const Tensor y = conv3d(x, Tensor({1, 1, 3, 3, 3}, delta), Tensor(), {1, 1, 1}, {1, 1, 1});
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>(x.data().begin(), x.data().end()));

  const Tensor z = conv3d(x, Tensor::zeros({2, 1, 3, 3, 3}), Tensor(), {1, 1, 1}, {1, 1, 1});
  for (double v : z.data()) CHECK(v == 0.0);
  sum(z).backward();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d_down") {
  RngStream rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.uniform_index(4), F = 1 + rng.uniform_index(4);
    const Shape xs{1 + rng.uniform_index(2), C, 2 * (1 + rng.uniform_index(4)), 2 * (1 + rng.uniform_index(4)),
                   2 * (1 + rng.uniform_index(9))};
    const Tensor x = random_tensor(rng, xs, false);
    const Tensor k = random_tensor(rng, {F, C, 2, 2, 2}, false);
    const Tensor y = random_tensor(rng, {xs[0], F, xs[2] / 2, xs[3] / 2, xs[4] / 2}, false);
    const Tensor down = conv3d_down(x, k, Tensor());
    const Tensor up = conv_transpose3d(y, k, Tensor());
    CHECK(up.shape() == xs);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < down.size(); ++i) lhs += down.data()[i] * y.data()[i];
    for (std::size_t i = 0; i < up.size(); ++i) rhs += x.data()[i] * up.data()[i];
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("conv_transpose3d matches the scatter oracle and doubles extents") {
  RngStream rng(36);
  for (const std::size_t stride : {std::size_t{2}, std::size_t{1}, std::size_t{3}}) {
    const Shape xs{2, 3, 3, 2, 5}, ks{3, 4, 2, 3, 2};
    const Tensor x = random_tensor(rng, xs, false), k = random_tensor(rng, ks, false);
    const Tensor y = conv_transpose3d(x, k, Tensor(), {stride, stride, stride});
    Shape ys;
    const auto ref = oracle::naive_conv_transpose3d({x.data().begin(), x.data().end()}, xs,
                                                    {k.data().begin(), k.data().end()}, ks, stride, ys);
    CHECK(y.shape() == ys);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - y.data()[i]) < 1e-12);
  }
  CHECK(conv_transpose3d(Tensor::zeros({1, 4, 16, 16, 16}), random_tensor(rng, {4, 2, 2, 2, 2}, false), Tensor()).shape() ==
        Shape{1, 2, 32, 32, 32});
  const Tensor zero_up = conv_transpose3d(Tensor::zeros({1, 2, 3, 3, 3}), random_tensor(rng, {2, 2, 2, 2, 2}, false), Tensor());
  for (double v : zero_up.data()) CHECK(v == 0.0);
  for (int trial = 0; trial < 20; ++trial)
    check_grad([](auto& in) { return conv_transpose3d(in[0], in[1], in[2]); },
               {random_tensor(rng, {1, 3, 2, 3, 2}), random_tensor(rng, {3, 2, 2, 2, 2}), random_tensor(rng, {2})}, rng);
}

TEST_CASE("composite conv, relu, sum") {
  RngStream rng(37);
  for (int trial = 0; trial < 5; ++trial)
    check_grad(
        [](auto& in) { return sum(relu(conv3d(in[0], in[1], Tensor(), {1, 1, 1}, {1, 1, 1}))); },
        {random_tensor(rng, {1, 2, 4, 4, 4}), random_tensor(rng, {3, 2, 3, 3, 3})}, rng);
}

TEST_CASE("forward is bitwise reproducible") {
  RngStream rng(38);
  const Tensor x = random_tensor(rng, {2, 3, 6, 6, 10}, false), k = random_tensor(rng, {4, 3, 3, 3, 3}, false);
  const Tensor a = conv3d(x, k, Tensor(), {1, 1, 1}, {1, 1, 1});
  const Tensor b = conv3d(x, k, Tensor(), {1, 1, 1}, {1, 1, 1});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("conv argument checks") {
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 2, 4, 4, 4}), Tensor::zeros({1, 3, 3, 3, 3}), Tensor(), {1, 1, 1}, {1, 1, 1}), Error);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 1, 2, 2, 2}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor(), {1, 1, 1}, {0, 0, 0}), Error);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 1, 4, 4, 4}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor::zeros({2}), {1, 1, 1}, {1, 1, 1}), Error);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 1, 4, 4, 4}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor(), {0, 1, 1}, {1, 1, 1}), Error);
}
