#include "voxelseg/phantom.hpp"

#include <cmath>

#include "voxelseg/error.hpp"
#include "voxelseg/rng.hpp"

namespace voxelseg::phantom {

void PhantomConfig::validate() const {
  for (std::size_t e : extents)
    if (e == 0) fail(ErrorCode::InvalidParams, "phantom extents must be positive");
  if (!(radius_lo > 0.0) || !(radius_hi >= radius_lo) || !std::isfinite(radius_hi))
    fail(ErrorCode::InvalidParams, "radius range must satisfy 0 < lo <= hi");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail(ErrorCode::InvalidParams, "noise_sigma must be >= 0");
  if (!std::isfinite(fg_intensity) || !std::isfinite(bg_intensity))
    fail(ErrorCode::InvalidParams, "intensities must be finite");
}

bool Ellipsoid::contains(double i, double j, double k) const {
  const double p[3] = {i, j, k};
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - center[a]) / radii[a];
    s += d * d;
  }
  return s <= 1.0;
}

Phantom generate(const PhantomConfig& config) {
  config.validate();
  RngStream rng(config.seed);
  const Extents& e = config.extents;
  Phantom out;
  out.mask = Volume(e, 0.0);

  for (std::size_t b = 0; b < config.n_blobs; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      Ellipsoid el;
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        el.radii[a] = rng.uniform(config.radius_lo, config.radius_hi);
        el.center[a] = rng.uniform(0.0, static_cast<double>(e[a] - 1));
        inside = inside && el.center[a] - el.radii[a] >= 0.0 &&
                 el.center[a] + el.radii[a] <= static_cast<double>(e[a] - 1);
      }
      if (!inside) continue;
      placed = true;
      out.blobs.push_back(el);
    }
    if (!placed)
      fail(ErrorCode::InfeasiblePlacement, "could not place blob " + std::to_string(b) + " inside the volume after " +
                                               std::to_string(kMaxPlacementAttempts) + " attempts");
  }

  for (const Ellipsoid& el : out.blobs) {
    std::size_t lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = static_cast<std::size_t>(std::ceil(el.center[a] - el.radii[a]));
      hi[a] = static_cast<std::size_t>(std::floor(el.center[a] + el.radii[a]));
    }
    for (std::size_t k = lo[2]; k <= hi[2]; ++k)
      for (std::size_t j = lo[1]; j <= hi[1]; ++j)
        for (std::size_t i = lo[0]; i <= hi[0]; ++i)
          if (el.contains(double(i), double(j), double(k))) out.mask.at(i, j, k) = 1.0;
  }

  out.image = Volume(e, 0.0);
  const double gap = config.fg_intensity - config.bg_intensity;
  for (std::size_t n = 0; n < out.image.size(); ++n) {
    const double noise = config.noise_sigma > 0.0 ? config.noise_sigma * rng.normal() : 0.0;
    out.image.data[n] = config.bg_intensity + gap * out.mask.data[n] + noise;
  }
  return out;
}

}  // namespace voxelseg::phantom
