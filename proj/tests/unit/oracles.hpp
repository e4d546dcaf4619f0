#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_grad(const std::function<double()>& f, std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b, double floor = 1e-3) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

inline std::vector<double> random_values(voxelseg::RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Textbook seven-loop direct convolution (cross-correlation), zero padding.
inline std::vector<double> naive_conv3d(const std::vector<double>& x, const std::vector<std::size_t>& xs,
                                        const std::vector<double>& k, const std::vector<std::size_t>& ks,
                                        const std::vector<double>& bias, std::array<std::size_t, 3> s,
                                        std::array<std::size_t, 3> p, std::vector<std::size_t>& ys) {
  const std::size_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::size_t F = ks[0], KD = ks[2], KH = ks[3], KW = ks[4];
  const std::size_t OD = (D + 2 * p[0] - KD) / s[0] + 1, OH = (H + 2 * p[1] - KH) / s[1] + 1,
                    OW = (W + 2 * p[2] - KW) / s[2] + 1;
  ys = {N, F, OD, OH, OW};
  std::vector<double> y(N * F * OD * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t od = 0; od < OD; ++od)
        for (std::size_t oh = 0; oh < OH; ++oh)
          for (std::size_t ow = 0; ow < OW; ++ow) {
            double acc = bias.empty() ? 0.0 : bias[f];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < KD; ++a)
                for (std::size_t b = 0; b < KH; ++b)
                  for (std::size_t e = 0; e < KW; ++e) {
                    const long id = long(od * s[0] + a) - long(p[0]);
                    const long ih = long(oh * s[1] + b) - long(p[1]);
                    const long iw = long(ow * s[2] + e) - long(p[2]);
                    if (id < 0 || ih < 0 || iw < 0 || id >= long(D) || ih >= long(H) || iw >= long(W)) continue;
                    acc += x[(((n * C + c) * D + id) * H + ih) * W + iw] * k[(((f * C + c) * KD + a) * KH + b) * KW + e];
                  }
            y[(((n * F + f) * OD + od) * OH + oh) * OW + ow] = acc;
          }
  return y;
}

// Scatter form of the transposed convolution: each input voxel stamps the
// kernel into the output.
inline std::vector<double> naive_conv_transpose3d(const std::vector<double>& x, const std::vector<std::size_t>& xs,
                                                  const std::vector<double>& k, const std::vector<std::size_t>& ks,
                                                  std::size_t stride, std::vector<std::size_t>& ys) {
  const std::size_t N = xs[0], F = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::size_t C = ks[1], KD = ks[2], KH = ks[3], KW = ks[4];
  const std::size_t OD = (D - 1) * stride + KD, OH = (H - 1) * stride + KH, OW = (W - 1) * stride + KW;
  ys = {N, C, OD, OH, OW};
  std::vector<double> y(N * C * OD * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const double v = x[(((n * F + f) * D + d) * H + h) * W + w];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < KD; ++a)
                for (std::size_t b = 0; b < KH; ++b)
                  for (std::size_t e = 0; e < KW; ++e)
                    y[(((n * C + c) * OD + d * stride + a) * OH + h * stride + b) * OW + w * stride + e] +=
                        v * k[(((f * C + c) * KD + a) * KH + b) * KW + e];
          }
  return y;
}

// Minimal hand-rolled NIfTI-1 writer, byte by byte, for fixtures.
struct RawNifti {
  std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);

  template <class T>
  void put(std::size_t offset, T value) {
    std::memcpy(bytes.data() + offset, &value, sizeof(T));
  }

  RawNifti(std::int16_t datatype, std::int16_t bitpix, std::array<std::int16_t, 3> extents) {
    put<std::int32_t>(0, 348);
    put<std::int16_t>(40, 3);
    for (int i = 0; i < 3; ++i) put<std::int16_t>(42 + 2 * i, extents[i]);
    for (int i = 3; i < 7; ++i) put<std::int16_t>(42 + 2 * i, 1);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    for (int i = 0; i < 4; ++i) put<float>(76 + 4 * i, 1.0f);
    put<float>(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }

  void identity_sform() {
    put<std::int16_t>(254, 1);
    for (int r = 0; r < 3; ++r) put<float>(280 + 16 * r + 4 * r, 1.0f);
  }

  template <class T>
  void append(T value) {
    const std::size_t at = bytes.size();
    bytes.resize(at + sizeof(T));
    std::memcpy(bytes.data() + at, &value, sizeof(T));
  }
};

}  // namespace oracle
