#include "voxelseg/volume.hpp"

#include <cmath>

#include "voxelseg/error.hpp"

namespace voxelseg {

Affine identity_affine() {
  Affine a{};
  for (int i = 0; i < 4; ++i) a[i][i] = 1.0;
  return a;
}

int world_axis_of(char letter) {
  switch (letter) {
    case 'R': case 'L': return 0;
    case 'A': case 'P': return 1;
    case 'S': case 'I': return 2;
    default: fail(ErrorCode::InvalidParams, std::string("bad orientation letter '") + letter + "'");
  }
}

bool is_positive_direction(char letter) { return letter == 'R' || letter == 'A' || letter == 'S'; }

OrientationCode::OrientationCode(std::string_view letters) {
  if (letters.size() != 3) fail(ErrorCode::InvalidParams, "orientation code needs 3 letters");
  std::array<bool, 3> seen{};
  for (std::size_t i = 0; i < 3; ++i) {
    const int axis = world_axis_of(letters[i]);
    if (seen[axis]) fail(ErrorCode::InvalidParams, "orientation code repeats an axis: " + std::string(letters));
    seen[axis] = true;
    letters_[i] = letters[i];
  }
}

Volume::Volume(const Extents& e, double fill) : extents(e), data(voxel_count(e), fill) {}

std::array<double, 3> Volume::spacing() const {
  std::array<double, 3> s{};
  for (int c = 0; c < 3; ++c) {
    s[c] = std::sqrt(affine[0][c] * affine[0][c] + affine[1][c] * affine[1][c] +
                     affine[2][c] * affine[2][c]);
  }
  return s;
}

std::array<double, 3> Volume::world(double i, double j, double k) const {
  std::array<double, 3> w{};
  for (int r = 0; r < 3; ++r) {
    w[r] = affine[r][0] * i + affine[r][1] * j + affine[r][2] * k + affine[r][3];
  }
  return w;
}

}  // namespace voxelseg
