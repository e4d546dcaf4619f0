#pragma once

#include <cstdint>
#include <vector>

#include "voxelseg/rng.hpp"
#include "voxelseg/volume.hpp"

namespace voxelseg::patching {

struct PatchSpec {
  Extents size{32, 32, 32};
  double fg_fraction = 0.5;
  double pad_value_image = 0.0;
  double pad_value_label = 0.0;

  void validate() const;
};

struct TrainingPatch {
  Volume image;
  Volume label;
  Index3 center{};
  bool foreground_centered = false;
  // Voxel-space position of the patch's first voxel in the source volume;
  // negative on axes that were padded.
  Index3 origin{};
};

std::vector<TrainingPatch> sample_training_patches(const Volume& image, const Volume& label,
                                                   const PatchSpec& params, std::size_t n, RngStream& rng);

// Copies the patch at origin (may extend past the volume on any side); voxels
// outside the volume take pad_value. The patch affine is shifted accordingly.
Volume extract_patch(const Volume& v, const Index3& origin, const Extents& size, double pad_value);

enum class Window { Uniform, Hann };

struct TileLayout {
  std::vector<Index3> origins;
  Extents patch_size{};
  Extents volume_extents{};
  Window window = Window::Hann;
};

TileLayout grid_tiles(const Extents& extents, const Extents& patch_size, const Extents& overlap,
                      Window window = Window::Hann);

inline Extents default_overlap(const Extents& patch_size) {
  return {patch_size[0] / 2, patch_size[1] / 2, patch_size[2] / 2};
}

// Per-axis blend weight for position i of a tile of length n.
double window_weight(Window window, std::size_t i, std::size_t n);

inline constexpr double kHannFloor = 1e-3;

// Window-weighted average of the tile predictions over the volume. Tiles are
// accumulated in lexicographic origin order, so the result does not depend on
// the order of the layout's origins.
Grid stitch(const TileLayout& layout, const std::vector<Grid>& tile_predictions);

}  // namespace voxelseg::patching
