#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "voxelseg/error.hpp"
#include "voxelseg/overlap.hpp"

using namespace voxelseg;
using namespace voxelseg::overlap;

namespace {

std::vector<double> bits(unsigned mask, int n = 8) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = (mask >> i) & 1u;
  return v;
}

struct SetScores {
  double j, d, t;
};

// Materialize P and G as index sets and count the partitions element by element.
SetScores brute_force(unsigned p, unsigned g, double alpha, double beta) {
  std::set<int> P, G;
  for (int i = 0; i < 8; ++i) {
    if ((p >> i) & 1u) P.insert(i);
    if ((g >> i) & 1u) G.insert(i);
  }
  double inter = 0, p_minus_g = 0, g_minus_p = 0;
  for (int x : P) (G.count(x) ? inter : p_minus_g) += 1;
  for (int x : G)
    if (!P.count(x)) g_minus_p += 1;
  if (P.empty() && G.empty()) return {1, 1, 1};
  return {inter / (inter + p_minus_g + g_minus_p), 2 * inter / (2 * inter + p_minus_g + g_minus_p),
          inter / (inter + alpha * p_minus_g + beta * g_minus_p)};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a voxelseg::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("counts examples") {
  const auto k3 = bits(0b0111);
  const OverlapCounts same = counts(k3, k3);
  CHECK(same.tp == 3);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  const OverlapCounts disjoint = counts(bits(0b0011), bits(0b11100));
  CHECK(disjoint.tp == 0);
  CHECK(disjoint.fp == 2);
  CHECK(disjoint.fn == 3);
  // P = {v1,v2,v3}, G = {v1,v2,v4}
  const OverlapCounts c = counts(bits(0b0111, 4), bits(0b1011, 4));
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
}

TEST_CASE("counts errors") {
  CHECK(code_of([] { counts(bits(1, 3), bits(1, 4)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([] { counts(std::vector<double>{0.5}, std::vector<double>{1}); }) == ErrorCode::NonBinaryInput);
}

TEST_CASE("coefficient examples") {
  const OverlapCounts c{2, 1, 1};
  CHECK(jaccard(c) == 0.5);
  CHECK(dice(c) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(tversky(c, {}) == dice(c));
  CHECK(tversky({2, 2, 0}, TverskyParams::from_alpha(0.7)) == doctest::Approx(2.0 / 3.4).epsilon(1e-14));
  const double fn_heavy = tversky({2, 0, 2}, TverskyParams::from_alpha(0.3));
  const double fp_heavy = tversky({2, 0, 2}, TverskyParams::from_alpha(0.7));
  CHECK(fn_heavy == doctest::Approx(2.0 / 3.4).epsilon(1e-14));
  CHECK(fp_heavy == doctest::Approx(2.0 / 2.6).epsilon(1e-14));
  CHECK(fn_heavy < fp_heavy);
  CHECK(jaccard({3, 0, 0}) == 1.0);
  CHECK(jaccard({0, 2, 3}) == 0.0);
  CHECK(jaccard({}) == 1.0);
  CHECK(dice({}) == 1.0);
  CHECK(tversky({}, {}) == 1.0);
}

TEST_CASE("tversky params must sum to one") {
  CHECK(code_of([] { TverskyParams{0.6, 0.6}.validate(); }) == ErrorCode::InvalidParams);
  CHECK(code_of([] { TverskyParams{1.2, -0.2}.validate(); }) == ErrorCode::InvalidParams);
  CHECK(code_of([] { TverskyParams{0.5, 0.5, 0.0}.validate(); }) == ErrorCode::InvalidParams);
  CHECK(code_of([] { tversky({1, 1, 1}, {0.3, 0.3}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("exhaustive 2x2x2 oracle") {
  const TverskyParams tp = TverskyParams::from_alpha(0.3);
  for (unsigned p = 0; p < 256; ++p)
    for (unsigned g = 0; g < 256; ++g) {
      const OverlapCounts c = counts(bits(p), bits(g));
      const SetScores ref = brute_force(p, g, tp.alpha, tp.beta);
      if (jaccard(c) != ref.j || dice(c) != ref.d || tversky(c, tp) != ref.t) {
        CAPTURE(p);
        CAPTURE(g);
        FAIL("mismatch against set oracle");
      }
    }
}

TEST_CASE("coefficient identities over random counts") {
  RngStream rng(12);
  for (int i = 0; i < 1000; ++i) {
    const OverlapCounts c{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0, 50)};
    const double j = jaccard(c), d = dice(c);
    CHECK(std::abs(tversky(c, {0.5, 0.5}) - d) < 1e-12);
    CHECK(std::abs(d - 2 * j / (1 + j)) < 1e-12);
  }
}

TEST_CASE("monotonicity") {
  RngStream rng(13);
  for (int i = 0; i < 200; ++i) {
    const OverlapCounts c{rng.uniform(0.1, 20), rng.uniform(0, 20), rng.uniform(0.1, 20)};
    OverlapCounts more = c;
    more.fp += rng.uniform(0.1, 5);
    const TverskyParams p = TverskyParams::from_alpha(rng.uniform(0.05, 0.95));
    CHECK(jaccard(more) < jaccard(c));
    CHECK(dice(more) < dice(c));
    CHECK(tversky(more, p) < tversky(c, p));
    // Under alpha + beta = 1, moving weight onto beta lowers T exactly when fn > fp.
    const TverskyParams heavier{p.alpha - 0.04, p.beta + 0.04};
    if (c.fn > c.fp) CHECK(tversky(c, heavier) < tversky(c, p));
    if (c.fn < c.fp) CHECK(tversky(c, heavier) > tversky(c, p));
  }
}

TEST_CASE("soft counts") {
  const auto g = bits(0b10110101);
  const OverlapCounts hard = soft_counts(bits(0b11100001), g);
  const OverlapCounts ref = counts(bits(0b11100001), g);
  CHECK(hard.tp == ref.tp);
  CHECK(hard.fp == ref.fp);
  CHECK(hard.fn == ref.fn);

  const OverlapCounts half = soft_counts(std::vector<double>(8, 0.5), g);
  CHECK(half.tp == 2.5);
  CHECK(half.fp == 1.5);
  CHECK(half.fn == 2.5);

  const OverlapCounts self = soft_counts(g, g);
  CHECK(self.tp == 5);
  CHECK(self.fp == 0);
  CHECK(self.fn == 0);

  CHECK(code_of([] { soft_counts(std::vector<double>{1.5}, std::vector<double>{1}); }) == ErrorCode::OutOfRange);
  CHECK(code_of([] { soft_counts(std::vector<double>{-0.1}, std::vector<double>{1}); }) == ErrorCode::OutOfRange);
  CHECK(code_of([] { soft_counts(std::vector<double>{0.5, 0.5}, std::vector<double>{1}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("soft losses at known points") {
  const auto g = bits(0b10110101);
  for (LossKind k : {LossKind::Jaccard, LossKind::Dice, LossKind::Tversky}) CHECK(std::abs(soft_loss(g, g, k)) < 1e-5);
  const double eps = 1e-6;
  CHECK(soft_loss(std::vector<double>{0.5}, std::vector<double>{1.0}, LossKind::Dice) ==
        doctest::Approx(1 - (1 + eps) / (1.5 + eps)).epsilon(1e-14));
  CHECK(soft_loss(std::vector<double>{0.5}, std::vector<double>{1.0}, LossKind::Dice) == doctest::Approx(1.0 / 3).epsilon(1e-5));
}

TEST_CASE("soft loss gradients match finite differences") {
  RngStream rng(14);
  for (LossKind kind : {LossKind::Jaccard, LossKind::Dice, LossKind::Tversky})
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> p = oracle::random_values(rng, 64, 0.05, 0.95);
      std::vector<double> g(64);
      for (double& x : g) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
      const TverskyParams tp = TverskyParams::from_alpha(rng.uniform(0.1, 0.9));
      const auto analytic = soft_loss_grad(p, g, kind, tp).grad;
      const auto numeric = oracle::numeric_grad([&] { return soft_loss(p, g, kind, tp); }, p);
      CHECK(oracle::max_rel_err(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("tversky with heavy false-negative weight exceeds dice when fn > fp") {
  RngStream rng(15);
  int checked = 0;
  while (checked < 1000) {
    std::vector<double> p = oracle::random_values(rng, 27, 0.0, 1.0);
    std::vector<double> g(27);
    for (double& x : g) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const OverlapCounts c = soft_counts(p, g);
    if (!(c.fn > c.fp)) continue;
    ++checked;
    CHECK(soft_loss(p, g, LossKind::Tversky, {0.3, 0.7}) > soft_loss(p, g, LossKind::Dice));
  }
}
