#include "voxelseg/geometry.hpp"

#include <cmath>

#include "voxelseg/error.hpp"

namespace voxelseg::geometry {
namespace {

constexpr char kPositive[3] = {'R', 'A', 'S'};
constexpr char kNegative[3] = {'L', 'P', 'I'};

double det3(const Affine& a) {
  return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
         a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
         a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

}  // namespace

OrientationCode orientation_of(const Affine& affine) {
  double scale = 1.0;
  for (int c = 0; c < 3; ++c) {
    double norm = 0.0;
    for (int r = 0; r < 3; ++r) norm += affine[r][c] * affine[r][c];
    scale *= std::sqrt(norm);
  }
  const double det = det3(affine);
  if (det == 0.0 || std::abs(det) <= 1e-12 * scale) fail(ErrorCode::SingularAffine, "voxel-to-world matrix is singular");

  std::array<char, 3> letters{};
  std::array<bool, 3> used{};
  for (int c = 0; c < 3; ++c) {
    int best = 0;
    for (int r = 1; r < 3; ++r) {
      if (std::abs(affine[r][c]) > std::abs(affine[best][c])) best = r;
    }
    if (used[best]) fail(ErrorCode::DegenerateOrientation, "two data axes map to the same world axis");
    used[best] = true;
    letters[c] = affine[best][c] > 0.0 ? kPositive[best] : kNegative[best];
  }
  return OrientationCode(std::string_view(letters.data(), 3));
}

AxisTransform transform_between(const OrientationCode& from, const OrientationCode& to) {
  AxisTransform t;
  for (int d = 0; d < 3; ++d) {
    const int world = world_axis_of(to[d]);
    for (int s = 0; s < 3; ++s) {
      if (world_axis_of(from[s]) == world) {
        t.permutation[d] = s;
        t.flips[d] = from[s] != to[d];
      }
    }
  }
  return t;
}

Volume reorient(const Volume& v, const OrientationCode& target) {
  const AxisTransform t = transform_between(v.orientation, target);

  Volume out;
  for (int d = 0; d < 3; ++d) out.extents[d] = v.extents[t.permutation[d]];
  out.data.assign(v.data.size(), 0.0);
  out.orientation = target;
  out.affine_from_pixdim = v.affine_from_pixdim;

  // old_index = M * new_index + b
  double m[3][3] = {};
  double b[3] = {};
  for (int d = 0; d < 3; ++d) {
    const int s = t.permutation[d];
    if (t.flips[d]) {
      m[s][d] = -1.0;
      b[s] = static_cast<double>(v.extents[s]) - 1.0;
    } else {
      m[s][d] = 1.0;
    }
  }
  Affine a = identity_affine();
  for (int r = 0; r < 3; ++r) {
    for (int d = 0; d < 3; ++d) {
      double acc = 0.0;
      for (int s = 0; s < 3; ++s) acc += v.affine[r][s] * m[s][d];
      a[r][d] = acc;
    }
    double shift = v.affine[r][3];
    for (int s = 0; s < 3; ++s) shift += v.affine[r][s] * b[s];
    a[r][3] = shift;
  }
  out.affine = a;

  std::array<std::size_t, 3> n{};
  std::array<std::size_t, 3> o{};
  for (n[2] = 0; n[2] < out.extents[2]; ++n[2]) {
    for (n[1] = 0; n[1] < out.extents[1]; ++n[1]) {
      for (n[0] = 0; n[0] < out.extents[0]; ++n[0]) {
        for (int d = 0; d < 3; ++d) {
          o[t.permutation[d]] = t.flips[d] ? out.extents[d] - 1 - n[d] : n[d];
        }
        out.at(n[0], n[1], n[2]) = v.at(o[0], o[1], o[2]);
      }
    }
  }
  return out;
}

}  // namespace voxelseg::geometry
