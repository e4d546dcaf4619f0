#pragma once

#include <cstdint>
#include <utility>

#include "voxelseg/volume.hpp"

namespace voxelseg::phantom {

struct PhantomConfig {
  Extents extents{64, 64, 64};
  std::size_t n_blobs = 5;
  double radius_lo = 4.0;
  double radius_hi = 8.0;
  double fg_intensity = 1.0;
  double bg_intensity = 0.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  // Throws InvalidParams.
  void validate() const;
};

inline constexpr int kMaxPlacementAttempts = 1000;

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  bool contains(double i, double j, double k) const;
};

struct Phantom {
  Volume image;
  Volume mask;
  std::vector<Ellipsoid> blobs;
};

// Union of axis-aligned ellipsoids fully inside the volume, plus Gaussian noise.
// Throws InfeasiblePlacement when a blob cannot be placed.
Phantom generate(const PhantomConfig& config);

}  // namespace voxelseg::phantom
