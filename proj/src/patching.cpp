#include "voxelseg/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "voxelseg/error.hpp"

namespace voxelseg::patching {
namespace {

std::int64_t clamp_origin(std::int64_t center, std::size_t patch, std::size_t extent) {
  const auto p = static_cast<std::int64_t>(patch);
  const auto e = static_cast<std::int64_t>(extent);
  if (e < p) return -((p - e) / 2);  // symmetric padding
  return std::clamp<std::int64_t>(center - p / 2, 0, e - p);
}

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t overlap) {
  if (extent <= patch) return {0};
  const std::size_t stride = patch - overlap;
  std::vector<std::size_t> out;
  std::size_t o = 0;
  while (true) {
    out.push_back(o);
    if (o + patch >= extent) break;
    o += stride;
    if (o + patch > extent) {
      out.push_back(extent - patch);
      break;
    }
  }
  return out;
}

}  // namespace

void PatchSpec::validate() const {
  for (std::size_t s : size) {
    if (s < 1) fail(ErrorCode::InvalidParams, "patch size must be >= 1");
  }
  if (!(fg_fraction >= 0.0 && fg_fraction <= 1.0)) fail(ErrorCode::InvalidParams, "fg_fraction must lie in [0, 1]");
}

Volume extract_patch(const Volume& v, const Index3& origin, const Extents& size, double pad_value) {
  Volume out(size, pad_value);
  out.orientation = v.orientation;
  out.affine = v.affine;
  for (int r = 0; r < 3; ++r) {
    double shift = v.affine[r][3];
    for (int c = 0; c < 3; ++c) shift += v.affine[r][c] * static_cast<double>(origin[c]);
    out.affine[r][3] = shift;
  }
  const auto inside = [&](std::size_t axis, std::int64_t p) {
    return p >= 0 && p < static_cast<std::int64_t>(v.extents[axis]);
  };
  for (std::size_t k = 0; k < size[2]; ++k) {
    const std::int64_t sk = origin[2] + static_cast<std::int64_t>(k);
    if (!inside(2, sk)) continue;
    for (std::size_t j = 0; j < size[1]; ++j) {
      const std::int64_t sj = origin[1] + static_cast<std::int64_t>(j);
      if (!inside(1, sj)) continue;
      // Contiguous run along axis 0.
      const std::int64_t i0 = std::max<std::int64_t>(0, -origin[0]);
      const std::int64_t i1 = std::min<std::int64_t>(static_cast<std::int64_t>(size[0]),
                                                     static_cast<std::int64_t>(v.extents[0]) - origin[0]);
      if (i1 <= i0) continue;
      const double* src = &v.data[v.index(static_cast<std::size_t>(origin[0] + i0), static_cast<std::size_t>(sj),
                                          static_cast<std::size_t>(sk))];
      std::copy(src, src + (i1 - i0), &out.data[out.index(static_cast<std::size_t>(i0), j, k)]);
    }
  }
  return out;
}

std::vector<TrainingPatch> sample_training_patches(const Volume& image, const Volume& label,
                                                   const PatchSpec& params, std::size_t n, RngStream& rng) {
  params.validate();
  if (image.extents != label.extents) fail(ErrorCode::ShapeMismatch, "image and label extents differ");
  std::vector<std::size_t> foreground;
  for (std::size_t i = 0; i < label.data.size(); ++i) {
    const double x = label.data[i];
    if (x != 0.0 && x != 1.0) fail(ErrorCode::NonBinaryLabel, "label is not binary");
    if (x == 1.0) foreground.push_back(i);
  }

  const Extents& e = image.extents;
  std::vector<TrainingPatch> out;
  out.reserve(n);
  for (std::size_t draw = 0; draw < n; ++draw) {
    const bool want_fg = rng.uniform() < params.fg_fraction;
    std::size_t linear;
    bool fg = false;
    if (want_fg && !foreground.empty()) {
      linear = foreground[rng.uniform_index(foreground.size())];
      fg = true;
    } else {
      linear = static_cast<std::size_t>(rng.uniform_index(image.data.size()));
    }
    const Index3 center{static_cast<std::int64_t>(linear % e[0]),
                        static_cast<std::int64_t>((linear / e[0]) % e[1]),
                        static_cast<std::int64_t>(linear / (e[0] * e[1]))};
    Index3 origin{};
    for (std::size_t a = 0; a < 3; ++a) origin[a] = clamp_origin(center[a], params.size[a], e[a]);

    TrainingPatch p;
    p.image = extract_patch(image, origin, params.size, params.pad_value_image);
    p.label = extract_patch(label, origin, params.size, 0.0);
    p.center = center;
    p.origin = origin;
    p.foreground_centered = fg;
    out.push_back(std::move(p));
  }
  return out;
}

TileLayout grid_tiles(const Extents& extents, const Extents& patch_size, const Extents& overlap, Window window) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (extents[a] < 1 || patch_size[a] < 1) fail(ErrorCode::InvalidOverlap, "extents and patch size must be >= 1");
    if (overlap[a] >= patch_size[a]) fail(ErrorCode::InvalidOverlap, "overlap must be smaller than the patch");
  }
  const auto ox = axis_origins(extents[0], patch_size[0], overlap[0]);
  const auto oy = axis_origins(extents[1], patch_size[1], overlap[1]);
  const auto oz = axis_origins(extents[2], patch_size[2], overlap[2]);
  TileLayout layout;
  layout.patch_size = patch_size;
  layout.volume_extents = extents;
  layout.window = window;
  for (std::size_t z : oz) {
    for (std::size_t y : oy) {
      for (std::size_t x : ox) {
        layout.origins.push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                                  static_cast<std::int64_t>(z)});
      }
    }
  }
  return layout;
}

double window_weight(Window window, std::size_t i, std::size_t n) {
  if (window == Window::Uniform) return 1.0;
  const double phase = 2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return std::max(kHannFloor, 0.5 - 0.5 * std::cos(phase));
}

Grid stitch(const TileLayout& layout, const std::vector<Grid>& tile_predictions) {
  if (tile_predictions.size() != layout.origins.size()) {
    fail(ErrorCode::LayoutMismatch, "one prediction per tile origin is required");
  }
  const Extents& ps = layout.patch_size;
  const Extents& ve = layout.volume_extents;
  for (const Grid& g : tile_predictions) {
    if (g.extents != ps || g.values.size() != voxel_count(ps)) {
      fail(ErrorCode::LayoutMismatch, "tile prediction extents differ from the patch size");
    }
  }

  std::array<std::vector<double>, 3> axis_w;
  for (std::size_t a = 0; a < 3; ++a) {
    axis_w[a].resize(ps[a]);
    for (std::size_t i = 0; i < ps[a]; ++i) axis_w[a][i] = window_weight(layout.window, i, ps[a]);
  }

  std::vector<std::size_t> order(layout.origins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Index3& oa = layout.origins[a];
    const Index3& ob = layout.origins[b];
    return std::tie(oa[2], oa[1], oa[0]) < std::tie(ob[2], ob[1], ob[0]);
  });

  // Accumulate w * (v - ref), where ref is the first covering tile's value, so
  // that tiles agreeing on a voxel reproduce that value bit-for-bit.
  Grid out(ve, 0.0);
  std::vector<double> num(voxel_count(ve), 0.0);
  std::vector<double> den(voxel_count(ve), 0.0);
  for (std::size_t t : order) {
    const Index3& o = layout.origins[t];
    const Grid& pred = tile_predictions[t];
    for (std::size_t k = 0; k < ps[2]; ++k) {
      const std::int64_t vk = o[2] + static_cast<std::int64_t>(k);
      if (vk < 0 || vk >= static_cast<std::int64_t>(ve[2])) continue;
      for (std::size_t j = 0; j < ps[1]; ++j) {
        const std::int64_t vj = o[1] + static_cast<std::int64_t>(j);
        if (vj < 0 || vj >= static_cast<std::int64_t>(ve[1])) continue;
        const double wjk = axis_w[1][j] * axis_w[2][k];
        for (std::size_t i = 0; i < ps[0]; ++i) {
          const std::int64_t vi = o[0] + static_cast<std::int64_t>(i);
          if (vi < 0 || vi >= static_cast<std::int64_t>(ve[0])) continue;
          const double w = axis_w[0][i] * wjk;
          const std::size_t dst = out.index(static_cast<std::size_t>(vi), static_cast<std::size_t>(vj),
                                            static_cast<std::size_t>(vk));
          const double value = pred.values[pred.index(i, j, k)];
          if (!std::isfinite(value)) fail(ErrorCode::LayoutMismatch, "tile prediction is not finite");
          if (den[dst] == 0.0) out.values[dst] = value;
          num[dst] += w * (value - out.values[dst]);
          den[dst] += w;
        }
      }
    }
  }
  for (std::size_t i = 0; i < den.size(); ++i) {
    if (den[i] <= 0.0) fail(ErrorCode::LayoutMismatch, "layout does not cover every voxel");
    out.values[i] += num[i] / den[i];
  }
  return out;
}

}  // namespace voxelseg::patching
