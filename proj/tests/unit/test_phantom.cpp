#include <cmath>
#include <numbers>

#include "doctest.h"
#include "voxelseg/error.hpp"
#include "voxelseg/phantom.hpp"

using namespace voxelseg;
using namespace voxelseg::phantom;

TEST_CASE("no blobs gives an empty mask and pure noise") {
  PhantomConfig c;
  c.n_blobs = 0;
  c.extents = {16, 16, 16};
  const Phantom p = generate(c);
  for (double v : p.mask.data) CHECK(v == 0.0);
  double mean = 0, var = 0;
  for (double v : p.image.data) mean += v;
  mean /= double(p.image.size());
  for (double v : p.image.data) var += (v - mean) * (v - mean);
  var /= double(p.image.size());
  CHECK(std::abs(mean - c.bg_intensity) < 0.05);
  CHECK(std::sqrt(var) == doctest::Approx(c.noise_sigma).epsilon(0.05));
}

TEST_CASE("same seed, same phantom") {
  PhantomConfig c;
  c.seed = 99;
  const Phantom a = generate(c), b = generate(c);
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.data == b.mask.data);
  c.seed = 100;
  CHECK(generate(c).image.data != a.image.data);
}

TEST_CASE("foreground fraction stays within the ellipsoid volume bounds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomConfig c;
    c.n_blobs = 3;
    c.radius_lo = 3;
    c.radius_hi = 5;
    c.seed = seed;
    const Phantom p = generate(c);
    double fg = 0;
    for (double v : p.mask.data) fg += v;
    const double n = 64.0 * 64 * 64, ball = 4.0 / 3.0 * std::numbers::pi;
    // Lattice counts can fall a little under the continuous volume for small radii.
    CHECK(fg / n >= 0.8 * ball * 27 / n);
    CHECK(fg / n <= 3 * ball * 125 / n);
  }
}

TEST_CASE("defaults keep foreground under five percent, binary and finite") {
  const Phantom p = generate({});
  double fg = 0;
  for (std::size_t i = 0; i < p.mask.size(); ++i) {
    CHECK((p.mask.data[i] == 0.0 || p.mask.data[i] == 1.0));
    CHECK(std::isfinite(p.image.data[i]));
    fg += p.mask.data[i];
  }
  CHECK(fg / double(p.mask.size()) < 0.05);
  CHECK(fg > 0);
  CHECK(p.image.orientation.str() == "RAS");
  CHECK(p.image.affine == identity_affine());
}

TEST_CASE("mask is exactly the union of ellipsoid inequalities") {
  PhantomConfig c;
  c.extents = {32, 24, 20};
  c.n_blobs = 4;
  c.radius_lo = 2;
  c.radius_hi = 6;
  const Phantom p = generate(c);
  REQUIRE(p.blobs.size() == 4);
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t j = 0; j < 24; ++j)
      for (std::size_t i = 0; i < 32; ++i) {
        bool in = false;
        for (const auto& b : p.blobs) {
          double s = 0;
          const double x[3] = {double(i), double(j), double(k)};
          for (int a = 0; a < 3; ++a) s += std::pow((x[a] - b.center[a]) / b.radii[a], 2);
          in = in || s <= 1.0;
        }
        CHECK(p.mask.at(i, j, k) == (in ? 1.0 : 0.0));
      }
  for (const auto& b : p.blobs)
    for (int a = 0; a < 3; ++a) {
      CHECK(b.center[a] - b.radii[a] >= 0.0);
      CHECK(b.center[a] + b.radii[a] <= double(c.extents[a] - 1));
    }
}

TEST_CASE("impossible placement is reported") {
  PhantomConfig c;
  c.extents = {8, 8, 8};
  c.radius_lo = 5;
  c.radius_hi = 6;
  try {
    generate(c);
    FAIL("expected InfeasiblePlacement");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InfeasiblePlacement);
  }
  c.radius_lo = -1;
  CHECK_THROWS_AS(generate(c), Error);
}
