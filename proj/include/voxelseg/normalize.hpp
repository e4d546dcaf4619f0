#pragma once

#include <optional>

#include "voxelseg/volume.hpp"

namespace voxelseg::normalize {

enum class Mode { ZScore, ClipRescale };

struct NormalizationSpec {
  Mode mode = Mode::ClipRescale;
  std::optional<double> clip_lo;
  std::optional<double> clip_hi;
  double out_lo = -1.0;
  double out_hi = 1.0;
};

// Zero mean, unit population variance. Constant volumes map to all zeros.
Volume zscore(const Volume& v);

// Clamp to the window, then map it affinely onto [out_lo, out_hi]. Without
// explicit bounds the window is the volume's own min/max.
Volume clip_rescale(const Volume& v, const NormalizationSpec& params);

// voxel > 0 -> 1, else 0.
Volume normalize_label(const Volume& v);

Volume apply(const Volume& v, const NormalizationSpec& params);

}  // namespace voxelseg::normalize
