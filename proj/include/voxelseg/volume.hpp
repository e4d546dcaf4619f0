#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace voxelseg {

using Extents = std::array<std::size_t, 3>;
using Index3 = std::array<std::int64_t, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

inline std::size_t voxel_count(const Extents& e) { return e[0] * e[1] * e[2]; }

Affine identity_affine();

// One letter per data axis naming the world direction that axis points
// toward: R/L, A/P, S/I. Each anatomical pair appears exactly once.
class OrientationCode {
 public:
  OrientationCode() : letters_{'R', 'A', 'S'} {}
  // Throws InvalidParams unless the letters name three distinct pairs.
  explicit OrientationCode(std::string_view letters);

  char operator[](std::size_t axis) const { return letters_[axis]; }
  std::string str() const { return {letters_.begin(), letters_.end()}; }

  friend bool operator==(const OrientationCode&, const OrientationCode&) = default;

 private:
  std::array<char, 3> letters_;
};

// World axis (0=x/RL, 1=y/AP, 2=z/SI) and sign encoded by an orientation letter.
int world_axis_of(char letter);
bool is_positive_direction(char letter);

// A 3D scalar grid. Data is stored with axis 0 varying fastest, the NIfTI
// on-disk layout: linear index = i + e0 * (j + e1 * k).
struct Volume {
  Extents extents{1, 1, 1};
  std::vector<double> data = std::vector<double>(1, 0.0);
  Affine affine = identity_affine();
  OrientationCode orientation{};
  // Set when the affine was synthesized from pixdim because the file had no sform.
  bool affine_from_pixdim = false;

  Volume() = default;
  Volume(const Extents& e, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + extents[0] * (j + extents[1] * k);
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data[index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data[index(i, j, k)]; }

  std::array<double, 3> spacing() const;
  std::array<double, 3> world(double i, double j, double k) const;
};

// Volume-shaped real grid without geometry; used for tile predictions and stitching.
struct Grid {
  Extents extents{};
  std::vector<double> values;

  Grid() = default;
  Grid(const Extents& e, double fill = 0.0) : extents(e), values(voxel_count(e), fill) {}
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + extents[0] * (j + extents[1] * k);
  }
};

}  // namespace voxelseg
