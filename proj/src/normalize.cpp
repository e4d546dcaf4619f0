#include "voxelseg/normalize.hpp"

#include <algorithm>
#include <cmath>

#include "voxelseg/error.hpp"

namespace voxelseg::normalize {

Volume zscore(const Volume& v) {
  Volume out = v;
  const double n = static_cast<double>(v.data.size());
  double mean = 0.0;
  for (double x : v.data) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v.data) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  // Rounding in the mean can leave a tiny spread on constant input; test equality directly.
  const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
  const bool constant = *mn == *mx;
  for (double& x : out.data) x = constant || sd == 0.0 ? 0.0 : (x - mean) / sd;
  return out;
}

Volume clip_rescale(const Volume& v, const NormalizationSpec& params) {
  if (params.mode != Mode::ClipRescale) fail(ErrorCode::InvalidParams, "clip_rescale needs mode ClipRescale");
  if (!(params.out_lo < params.out_hi)) fail(ErrorCode::InvalidWindow, "output range must satisfy out_lo < out_hi");
  if (params.clip_lo.has_value() != params.clip_hi.has_value()) {
    fail(ErrorCode::InvalidWindow, "clip window needs both bounds");
  }
  double lo, hi;
  if (params.clip_lo) {
    lo = *params.clip_lo;
    hi = *params.clip_hi;
    if (!(lo < hi)) fail(ErrorCode::InvalidWindow, "clip_lo must be < clip_hi");
  } else {
    const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
    lo = *mn;
    hi = *mx;
  }

  Volume out = v;
  if (lo == hi) {
    std::fill(out.data.begin(), out.data.end(), 0.5 * (params.out_lo + params.out_hi));
    return out;
  }
  const double span = params.out_hi - params.out_lo;
  for (double& x : out.data) {
    const double c = std::clamp(x, lo, hi);
    // Endpoints are assigned directly so the window bounds land exactly on out_lo/out_hi.
    if (c == lo) x = params.out_lo;
    else if (c == hi) x = params.out_hi;
    else x = std::clamp(params.out_lo + (c - lo) / (hi - lo) * span, params.out_lo, params.out_hi);
  }
  return out;
}

Volume normalize_label(const Volume& v) {
  Volume out = v;
  for (double& x : out.data) x = x > 0.0 ? 1.0 : 0.0;
  return out;
}

Volume apply(const Volume& v, const NormalizationSpec& params) {
  return params.mode == Mode::ZScore ? zscore(v) : clip_rescale(v, params);
}

}  // namespace voxelseg::normalize
