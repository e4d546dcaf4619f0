#pragma once

#include <array>

#include "voxelseg/volume.hpp"

namespace voxelseg::geometry {

// Destination axis d reads source axis permutation[d], reversed when flips[d].
struct AxisTransform {
  std::array<int, 3> permutation{0, 1, 2};
  std::array<bool, 3> flips{false, false, false};
};

OrientationCode orientation_of(const Affine& affine);

AxisTransform transform_between(const OrientationCode& from, const OrientationCode& to);

Volume reorient(const Volume& v, const OrientationCode& target);

inline Volume canonicalize(const Volume& v) { return reorient(v, OrientationCode("RAS")); }

}  // namespace voxelseg::geometry
