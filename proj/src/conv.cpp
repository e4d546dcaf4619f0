// 3D convolution kernels and their autodiff wiring.
//
// Three execution paths share one set of semantics (cross-correlation with
// zero padding, output extent floor((n + 2p - k) / s) + 1):
//   * stride 1: row-blocked direct convolution over a zero-padded copy;
//   * kernel == stride, no padding: space-to-depth followed by a pointwise
//     convolution on the fast path (this is the 2x2x2/2 down and up sampling);
//   * anything else: plain loops.
// Every path accumulates each output in (channel, kd, kh, kw) order.

#include <algorithm>
#include <cstring>

#include "voxelseg/error.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg::ad {
namespace {

struct Dims {
  std::size_t n, c, d, h, w;
  std::size_t spatial() const { return d * h * w; }
  std::size_t count() const { return n * c * d * h * w; }
};

struct KDims {
  std::size_t f, c, d, h, w;
  std::size_t taps() const { return d * h * w; }
};

Dims dims_of(const Tensor& t) {
  const Shape& s = t.shape();
  return {s[0], s[1], s[2], s[3], s[4]};
}

KDims kdims_of(const Tensor& t) {
  const Shape& s = t.shape();
  return {s[0], s[1], s[2], s[3], s[4]};
}

std::vector<double> pad_input(const double* x, const Dims& xd, const Triple& lo, const Triple& hi, Dims& out) {
  out = {xd.n, xd.c, xd.d + lo[0] + hi[0], xd.h + lo[1] + hi[1], xd.w + lo[2] + hi[2]};
  if (lo == Triple{0, 0, 0} && hi == Triple{0, 0, 0}) return std::vector<double>(x, x + xd.count());
  std::vector<double> y(out.count(), 0.0);
  for (std::size_t nc = 0; nc < xd.n * xd.c; ++nc) {
    for (std::size_t d = 0; d < xd.d; ++d) {
      for (std::size_t h = 0; h < xd.h; ++h) {
        const double* src = x + ((nc * xd.d + d) * xd.h + h) * xd.w;
        double* dst = y.data() + ((nc * out.d + d + lo[0]) * out.h + h + lo[1]) * out.w + lo[2];
        std::copy_n(src, xd.w, dst);
      }
    }
  }
  return y;
}

// Eight-lane vector of doubles; the compiler lowers it to whatever the target
// offers (one zmm register with AVX-512).
typedef double v8d __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 8;

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }

inline double horizontal_sum(v8d v) {
  double s = 0.0;
  for (std::size_t l = 0; l < kLanes; ++l) s += v[l];
  return s;
}

// Offsets of every kernel tap (c, a, r, e) inside a padded input, relative to
// the tap-(0,0,0,0) position. Tap order matches the kernel's memory order.
std::vector<std::size_t> tap_offsets(const Dims& xd, const KDims& kd) {
  std::vector<std::size_t> off;
  off.reserve(kd.c * kd.taps());
  for (std::size_t c = 0; c < kd.c; ++c)
    for (std::size_t a = 0; a < kd.d; ++a)
      for (std::size_t r = 0; r < kd.h; ++r)
        for (std::size_t e = 0; e < kd.w; ++e) off.push_back(((c * xd.d + a) * xd.h + r) * xd.w + e);
  return off;
}

// FB filters x NV*8 consecutive output columns, accumulated in registers.
// The tap loop is kept flat so GCC holds the accumulators in registers.
template <std::size_t FB, std::size_t NV>
void correlate_tile(const double* __restrict base, const std::size_t* __restrict offs, std::size_t ntaps,
                    const double* __restrict k, const double* bias, double* __restrict out, std::size_t ostride) {
  v8d acc[FB][NV];
#pragma GCC unroll 16
  for (std::size_t b = 0; b < FB; ++b) {
    const double init = bias ? bias[b] : 0.0;
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) acc[b][v] = v8d{} + init;
  }
  for (std::size_t t = 0; t < ntaps; ++t) {
    const double* xr = base + offs[t];
    v8d xv[NV];
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) xv[v] = load8(xr + v * kLanes);
#pragma GCC unroll 16
    for (std::size_t b = 0; b < FB; ++b) {
      const double w = k[b * ntaps + t];
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) acc[b][v] += w * xv[v];
    }
  }
#pragma GCC unroll 16
  for (std::size_t b = 0; b < FB; ++b)
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) store8(out + b * ostride + v * kLanes, acc[b][v]);
}

template <std::size_t FB>
void correlate_columns(const double* base, const std::size_t* offs, std::size_t ntaps, const double* k,
                       const double* bias, double* out, std::size_t ostride, std::size_t ow) {
  std::size_t i = 0;
  for (; i + 4 * kLanes <= ow; i += 4 * kLanes) correlate_tile<FB, 4>(base + i, offs, ntaps, k, bias, out + i, ostride);
  for (; i + 2 * kLanes <= ow; i += 2 * kLanes) correlate_tile<FB, 2>(base + i, offs, ntaps, k, bias, out + i, ostride);
  for (; i + kLanes <= ow; i += kLanes) correlate_tile<FB, 1>(base + i, offs, ntaps, k, bias, out + i, ostride);
  for (; i < ow; ++i) {
    for (std::size_t b = 0; b < FB; ++b) {
      double s = bias ? bias[b] : 0.0;
      for (std::size_t t = 0; t < ntaps; ++t) s += k[b * ntaps + t] * base[i + offs[t]];
      out[b * ostride + i] = s;
    }
  }
}

// Valid cross-correlation, stride 1, over an already padded input.
void correlate_valid(const double* x, const Dims& xd, const double* k, const KDims& kd, const double* bias,
                     double* out) {
  const std::size_t od = xd.d - kd.d + 1;
  const std::size_t oh = xd.h - kd.h + 1;
  const std::size_t ow = xd.w - kd.w + 1;
  const std::size_t ostride = od * oh * ow;
  const auto offs = tap_offsets(xd, kd);
  const std::size_t ntaps = offs.size();
  for (std::size_t n = 0; n < xd.n; ++n) {
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        const double* base = x + ((n * xd.c * xd.d + z) * xd.h + y) * xd.w;
        double* orow = out + ((n * kd.f * od + z) * oh + y) * ow;
        std::size_t f = 0;
        for (; f + 4 <= kd.f; f += 4)
          correlate_columns<4>(base, offs.data(), ntaps, k + f * ntaps, bias ? bias + f : nullptr, orow + f * ostride, ostride, ow);
        for (; f + 2 <= kd.f; f += 2)
          correlate_columns<2>(base, offs.data(), ntaps, k + f * ntaps, bias ? bias + f : nullptr, orow + f * ostride, ostride, ow);
        for (; f < kd.f; ++f)
          correlate_columns<1>(base, offs.data(), ntaps, k + f * ntaps, bias ? bias + f : nullptr, orow + f * ostride, ostride, ow);
      }
    }
  }
}

// Per-(n, z, y) row starts of the gradient and of the padded input.
struct RowTable {
  std::vector<std::size_t> g;
  std::vector<std::size_t> x;
};

RowTable row_table(const Dims& xd, const Dims& gd) {
  RowTable t;
  for (std::size_t n = 0; n < gd.n; ++n)
    for (std::size_t z = 0; z < gd.d; ++z)
      for (std::size_t y = 0; y < gd.h; ++y) {
        t.g.push_back(((n * gd.c * gd.d + z) * gd.h + y) * gd.w);
        t.x.push_back(((n * xd.c * xd.d + z) * xd.h + y) * xd.w);
      }
  return t;
}

// partial[b][e] += sum over rows of g[f0+b, row, i0 + 0..NV*8) * x[c, row + (a, r), i0 + e + ...]
template <std::size_t FB, std::size_t KW, std::size_t NV>
void kernel_grad_tile(const double* __restrict g, std::size_t gstride, const double* __restrict x,
                      const RowTable& rows, std::size_t i0, v8d* __restrict partial) {
  v8d acc[FB][KW][NV];
#pragma GCC unroll 16
  for (std::size_t b = 0; b < FB; ++b)
#pragma GCC unroll 16
    for (std::size_t e = 0; e < KW; ++e)
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) acc[b][e][v] = v8d{};
  const std::size_t nrows = rows.g.size();
  const std::size_t* __restrict grows = rows.g.data();
  const std::size_t* __restrict xrows = rows.x.data();
  for (std::size_t q = 0; q < nrows; ++q) {
    const double* xr = x + xrows[q] + i0;
    v8d xv[KW][NV];
#pragma GCC unroll 16
    for (std::size_t e = 0; e < KW; ++e)
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) xv[e][v] = load8(xr + e + v * kLanes);
#pragma GCC unroll 16
    for (std::size_t b = 0; b < FB; ++b) {
      const double* gr = g + b * gstride + grows[q] + i0;
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) {
        const v8d gv = load8(gr + v * kLanes);
#pragma GCC unroll 16
        for (std::size_t e = 0; e < KW; ++e) acc[b][e][v] += gv * xv[e][v];
      }
    }
  }
#pragma GCC unroll 16
  for (std::size_t b = 0; b < FB; ++b)
#pragma GCC unroll 16
    for (std::size_t e = 0; e < KW; ++e)
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) partial[b * KW + e] += acc[b][e][v];
}

template <std::size_t FB, std::size_t KW>
void kernel_grad_block(const double* x, const Dims& xd, const double* g, const Dims& gd, const KDims& kd,
                       const RowTable& rows, std::size_t f0, double* gk) {
  const std::size_t ow = gd.w;
  const std::size_t vec_end = ow - ow % kLanes;
  const std::size_t gstride = gd.spatial();
  const double* gbase = g + f0 * gstride;
  constexpr std::size_t kVec = 4;
  for (std::size_t c = 0; c < kd.c; ++c) {
    for (std::size_t a = 0; a < kd.d; ++a) {
      for (std::size_t r = 0; r < kd.h; ++r) {
        const double* xbase = x + ((c * xd.d + a) * xd.h + r) * xd.w;
        v8d partial[FB * KW] = {};
        std::size_t i = 0;
        for (; i + kVec * kLanes <= vec_end; i += kVec * kLanes) kernel_grad_tile<FB, KW, kVec>(gbase, gstride, xbase, rows, i, partial);
        for (; i < vec_end; i += kLanes) kernel_grad_tile<FB, KW, 1>(gbase, gstride, xbase, rows, i, partial);
        for (std::size_t b = 0; b < FB; ++b) {
          for (std::size_t e = 0; e < KW; ++e) {
            double s = horizontal_sum(partial[b * KW + e]);
            for (std::size_t q = 0; q < rows.g.size(); ++q) {
              const double* gr = gbase + b * gstride + rows.g[q];
              const double* xr = xbase + rows.x[q];
              for (std::size_t t = vec_end; t < ow; ++t) s += gr[t] * xr[t + e];
            }
            gk[((((f0 + b) * kd.c + c) * kd.d + a) * kd.h + r) * kd.w + e] += s;
          }
        }
      }
    }
  }
}

template <std::size_t KW>
void kernel_grad_dispatch(const double* x, const Dims& xd, const double* g, const Dims& gd, const KDims& kd,
                          double* gk) {
  const RowTable rows = row_table(xd, gd);
  constexpr std::size_t kFB = KW == 1 ? 4 : 2;
  std::size_t f = 0;
  for (; f + kFB <= kd.f; f += kFB) kernel_grad_block<kFB, KW>(x, xd, g, gd, kd, rows, f, gk);
  for (; f < kd.f; ++f) kernel_grad_block<1, KW>(x, xd, g, gd, kd, rows, f, gk);
}

// gk[f,c,a,r,e] += sum_{n,z,y,i} g[n,f,z,y,i] * x[n,c,z+a,y+r,i+e] over a padded x.
void kernel_grad_valid(const double* __restrict x, const Dims& xd, const double* __restrict g, const Dims& gd,
                       const KDims& kd, double* __restrict gk) {
  switch (kd.w) {
    case 1: kernel_grad_dispatch<1>(x, xd, g, gd, kd, gk); return;
    case 2: kernel_grad_dispatch<2>(x, xd, g, gd, kd, gk); return;
    case 3: kernel_grad_dispatch<3>(x, xd, g, gd, kd, gk); return;
    default: break;
  }
  const std::size_t ow = gd.w;
  for (std::size_t f = 0; f < kd.f; ++f) {
    for (std::size_t c = 0; c < kd.c; ++c) {
      for (std::size_t t = 0; t < kd.taps(); ++t) {
        const std::size_t a = t / (kd.h * kd.w), r = (t / kd.w) % kd.h, e = t % kd.w;
        double s = 0.0;
        for (std::size_t n = 0; n < gd.n; ++n)
          for (std::size_t z = 0; z < gd.d; ++z)
            for (std::size_t y = 0; y < gd.h; ++y) {
              const double* grow = g + (((n * gd.c + f) * gd.d + z) * gd.h + y) * ow;
              const double* xrow = x + (((n * xd.c + c) * xd.d + z + a) * xd.h + y + r) * xd.w;
              for (std::size_t i = 0; i < ow; ++i) s += grow[i] * xrow[i + e];
            }
        gk[(f * kd.c + c) * kd.taps() + t] += s;
      }
    }
  }
}

// Kernel with F and C swapped and every spatial axis reversed.
std::vector<double> flip_transpose(const double* k, const KDims& kd) {
  std::vector<double> out(kd.f * kd.c * kd.taps());
  for (std::size_t f = 0; f < kd.f; ++f) {
    for (std::size_t c = 0; c < kd.c; ++c) {
      for (std::size_t a = 0; a < kd.d; ++a) {
        for (std::size_t r = 0; r < kd.h; ++r) {
          for (std::size_t e = 0; e < kd.w; ++e) {
            out[(((c * kd.f + f) * kd.d + (kd.d - 1 - a)) * kd.h + (kd.h - 1 - r)) * kd.w + (kd.w - 1 - e)] =
                k[(((f * kd.c + c) * kd.d + a) * kd.h + r) * kd.w + e];
          }
        }
      }
    }
  }
  return out;
}

// [N,C,D,H,W] -> [N, C*kd*kh*kw, D/kd, H/kh, W/kw], channel index c*taps + tap.
std::vector<double> space_to_depth(const double* x, const Dims& xd, const Triple& k) {
  const Dims od{xd.n, xd.c * k[0] * k[1] * k[2], xd.d / k[0], xd.h / k[1], xd.w / k[2]};
  std::vector<double> y(od.count());
  for (std::size_t n = 0; n < xd.n; ++n) {
    for (std::size_t c = 0; c < xd.c; ++c) {
      for (std::size_t z = 0; z < xd.d; ++z) {
        for (std::size_t yy = 0; yy < xd.h; ++yy) {
          const double* src = x + (((n * xd.c + c) * xd.d + z) * xd.h + yy) * xd.w;
          const std::size_t tap_zy = ((z % k[0]) * k[1] + yy % k[1]) * k[2];
          for (std::size_t i = 0; i < xd.w; ++i) {
            const std::size_t ch = c * k[0] * k[1] * k[2] + tap_zy + i % k[2];
            y[(((n * od.c + ch) * od.d + z / k[0]) * od.h + yy / k[1]) * od.w + i / k[2]] = src[i];
          }
        }
      }
    }
  }
  return y;
}

// Inverse of space_to_depth, accumulating into x.
void depth_to_space_add(const double* y, const Dims& xd, const Triple& k, double* x) {
  const Dims od{xd.n, xd.c * k[0] * k[1] * k[2], xd.d / k[0], xd.h / k[1], xd.w / k[2]};
  for (std::size_t n = 0; n < xd.n; ++n) {
    for (std::size_t c = 0; c < xd.c; ++c) {
      for (std::size_t z = 0; z < xd.d; ++z) {
        for (std::size_t yy = 0; yy < xd.h; ++yy) {
          double* dst = x + (((n * xd.c + c) * xd.d + z) * xd.h + yy) * xd.w;
          const std::size_t tap_zy = ((z % k[0]) * k[1] + yy % k[1]) * k[2];
          for (std::size_t i = 0; i < xd.w; ++i) {
            const std::size_t ch = c * k[0] * k[1] * k[2] + tap_zy + i % k[2];
            dst[i] += y[(((n * od.c + ch) * od.d + z / k[0]) * od.h + yy / k[1]) * od.w + i / k[2]];
          }
        }
      }
    }
  }
}

bool is_patchify(const KDims& kd, const Triple& stride, const Triple& padding, const Dims& xd) {
  return stride[0] == kd.d && stride[1] == kd.h && stride[2] == kd.w && padding == Triple{0, 0, 0} &&
         xd.d % kd.d == 0 && xd.h % kd.h == 0 && xd.w % kd.w == 0;
}

struct ConvGeometry {
  Dims x;
  KDims k;
  Triple stride;
  Triple padding;
  Dims y;
};

// y = conv(x, k) + bias
std::vector<double> conv_forward(const double* x, const double* k, const double* bias, const ConvGeometry& g) {
  std::vector<double> y(g.y.count(), 0.0);
  if (g.stride == Triple{1, 1, 1}) {
    Dims pd;
    const auto xp = pad_input(x, g.x, g.padding, g.padding, pd);
    correlate_valid(xp.data(), pd, k, g.k, bias, y.data());
    return y;
  }
  if (is_patchify(g.k, g.stride, g.padding, g.x)) {
    const auto xs = space_to_depth(x, g.x, {g.k.d, g.k.h, g.k.w});
    const Dims sd{g.x.n, g.x.c * g.k.taps(), g.y.d, g.y.h, g.y.w};
    correlate_valid(xs.data(), sd, k, {g.k.f, g.k.c * g.k.taps(), 1, 1, 1}, bias, y.data());
    return y;
  }
  for (std::size_t n = 0; n < g.y.n; ++n) {
    for (std::size_t f = 0; f < g.k.f; ++f) {
      for (std::size_t z = 0; z < g.y.d; ++z) {
        for (std::size_t yy = 0; yy < g.y.h; ++yy) {
          for (std::size_t i = 0; i < g.y.w; ++i) {
            double s = bias ? bias[f] : 0.0;
            for (std::size_t c = 0; c < g.x.c; ++c) {
              for (std::size_t a = 0; a < g.k.d; ++a) {
                const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(z * g.stride[0] + a) - static_cast<std::ptrdiff_t>(g.padding[0]);
                if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(g.x.d)) continue;
                for (std::size_t r = 0; r < g.k.h; ++r) {
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy * g.stride[1] + r) - static_cast<std::ptrdiff_t>(g.padding[1]);
                  if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.x.h)) continue;
                  for (std::size_t e = 0; e < g.k.w; ++e) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * g.stride[2] + e) - static_cast<std::ptrdiff_t>(g.padding[2]);
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.x.w)) continue;
                    s += k[(((f * g.k.c + c) * g.k.d + a) * g.k.h + r) * g.k.w + e] *
                         x[(((n * g.x.c + c) * g.x.d + sz) * g.x.h + sy) * g.x.w + sx];
                  }
                }
              }
            }
            y[(((n * g.k.f + f) * g.y.d + z) * g.y.h + yy) * g.y.w + i] = s;
          }
        }
      }
    }
  }
  return y;
}

// gx += conv^T(gy)
void conv_backward_input(const double* gy, const double* k, const ConvGeometry& g, double* gx) {
  const bool stride1 = g.stride == Triple{1, 1, 1};
  if (stride1 && g.padding[0] < g.k.d && g.padding[1] < g.k.h && g.padding[2] < g.k.w) {
    const Triple lo{g.k.d - 1 - g.padding[0], g.k.h - 1 - g.padding[1], g.k.w - 1 - g.padding[2]};
    // High-side padding reaches the input rows past the last output.
    Triple hi2{};
    hi2[0] = g.x.d - g.y.d + g.k.d - 1 - lo[0];
    hi2[1] = g.x.h - g.y.h + g.k.h - 1 - lo[1];
    hi2[2] = g.x.w - g.y.w + g.k.w - 1 - lo[2];
    Dims pd;
    const auto gp = pad_input(gy, g.y, lo, hi2, pd);
    const auto kt = flip_transpose(k, g.k);
    std::vector<double> tmp(g.x.count());
    correlate_valid(gp.data(), pd, kt.data(), {g.k.c, g.k.f, g.k.d, g.k.h, g.k.w}, nullptr, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
    return;
  }
  if (is_patchify(g.k, g.stride, g.padding, g.x)) {
    // Pointwise transpose: [C*taps, F] kernel applied to gy.
    const std::size_t cin = g.k.c * g.k.taps();
    std::vector<double> kt(cin * g.k.f);
    for (std::size_t f = 0; f < g.k.f; ++f) {
      for (std::size_t ci = 0; ci < cin; ++ci) kt[ci * g.k.f + f] = k[f * cin + ci];
    }
    std::vector<double> ys(g.y.n * cin * g.y.spatial());
    correlate_valid(gy, g.y, kt.data(), {cin, g.k.f, 1, 1, 1}, nullptr, ys.data());
    depth_to_space_add(ys.data(), g.x, {g.k.d, g.k.h, g.k.w}, gx);
    return;
  }
  for (std::size_t n = 0; n < g.y.n; ++n) {
    for (std::size_t f = 0; f < g.k.f; ++f) {
      for (std::size_t z = 0; z < g.y.d; ++z) {
        for (std::size_t yy = 0; yy < g.y.h; ++yy) {
          for (std::size_t i = 0; i < g.y.w; ++i) {
            const double gv = gy[(((n * g.k.f + f) * g.y.d + z) * g.y.h + yy) * g.y.w + i];
            for (std::size_t c = 0; c < g.x.c; ++c) {
              for (std::size_t a = 0; a < g.k.d; ++a) {
                const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(z * g.stride[0] + a) - static_cast<std::ptrdiff_t>(g.padding[0]);
                if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(g.x.d)) continue;
                for (std::size_t r = 0; r < g.k.h; ++r) {
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy * g.stride[1] + r) - static_cast<std::ptrdiff_t>(g.padding[1]);
                  if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.x.h)) continue;
                  for (std::size_t e = 0; e < g.k.w; ++e) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * g.stride[2] + e) - static_cast<std::ptrdiff_t>(g.padding[2]);
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.x.w)) continue;
                    gx[(((n * g.x.c + c) * g.x.d + sz) * g.x.h + sy) * g.x.w + sx] +=
                        gv * k[(((f * g.k.c + c) * g.k.d + a) * g.k.h + r) * g.k.w + e];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// gk += d/dk <conv(x, k), gy>
void conv_backward_kernel(const double* x, const double* gy, const ConvGeometry& g, double* gk) {
  if (g.stride == Triple{1, 1, 1}) {
    Dims pd;
    const auto xp = pad_input(x, g.x, g.padding, g.padding, pd);
    kernel_grad_valid(xp.data(), pd, gy, g.y, g.k, gk);
    return;
  }
  if (is_patchify(g.k, g.stride, g.padding, g.x)) {
    const auto xs = space_to_depth(x, g.x, {g.k.d, g.k.h, g.k.w});
    const Dims sd{g.x.n, g.x.c * g.k.taps(), g.y.d, g.y.h, g.y.w};
    kernel_grad_valid(xs.data(), sd, gy, g.y, {g.k.f, g.k.c * g.k.taps(), 1, 1, 1}, gk);
    return;
  }
  for (std::size_t f = 0; f < g.k.f; ++f) {
    for (std::size_t c = 0; c < g.x.c; ++c) {
      for (std::size_t a = 0; a < g.k.d; ++a) {
        for (std::size_t r = 0; r < g.k.h; ++r) {
          for (std::size_t e = 0; e < g.k.w; ++e) {
            double s = 0.0;
            for (std::size_t n = 0; n < g.y.n; ++n) {
              for (std::size_t z = 0; z < g.y.d; ++z) {
                const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(z * g.stride[0] + a) - static_cast<std::ptrdiff_t>(g.padding[0]);
                if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(g.x.d)) continue;
                for (std::size_t yy = 0; yy < g.y.h; ++yy) {
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy * g.stride[1] + r) - static_cast<std::ptrdiff_t>(g.padding[1]);
                  if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.x.h)) continue;
                  for (std::size_t i = 0; i < g.y.w; ++i) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * g.stride[2] + e) - static_cast<std::ptrdiff_t>(g.padding[2]);
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.x.w)) continue;
                    s += gy[(((n * g.k.f + f) * g.y.d + z) * g.y.h + yy) * g.y.w + i] *
                         x[(((n * g.x.c + c) * g.x.d + sz) * g.x.h + sy) * g.x.w + sx];
                  }
                }
              }
            }
            gk[(((f * g.k.c + c) * g.k.d + a) * g.k.h + r) * g.k.w + e] += s;
          }
        }
      }
    }
  }
}

void bias_grad(const double* gy, const Dims& yd, double* gb) {
  for (std::size_t f = 0; f < yd.c; ++f) {
    double s = 0.0;
    for (std::size_t n = 0; n < yd.n; ++n) {
      const double* p = gy + (n * yd.c + f) * yd.spatial();
      for (std::size_t i = 0; i < yd.spatial(); ++i) s += p[i];
    }
    gb[f] += s;
  }
}

void check_conv_args(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t bias_len, const char* op) {
  if (x.shape().size() != 5) fail(ErrorCode::ShapeMismatch, std::string(op) + ": input must be [N,C,D,H,W]");
  if (kernel.shape().size() != 5) fail(ErrorCode::ShapeMismatch, std::string(op) + ": kernel must be 5-D");
  if (bias.defined() && (bias.shape().size() != 1 || bias.size() != bias_len)) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": bias length mismatch");
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const Triple& stride, const Triple& padding) {
  check_conv_args(x, kernel, bias, kernel.defined() && kernel.shape().size() == 5 ? kernel.dim(0) : 0, "conv3d");
  ConvGeometry g{dims_of(x), kdims_of(kernel), stride, padding, {}};
  if (g.k.c != g.x.c) fail(ErrorCode::ShapeMismatch, "conv3d: kernel channels do not match input channels");
  const std::size_t ext[3] = {g.x.d, g.x.h, g.x.w};
  const std::size_t ks[3] = {g.k.d, g.k.h, g.k.w};
  std::size_t out[3];
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) fail(ErrorCode::ShapeMismatch, "conv3d: stride must be >= 1");
    if (ext[a] + 2 * padding[a] < ks[a]) fail(ErrorCode::ShapeMismatch, "conv3d: kernel larger than padded input");
    out[a] = (ext[a] + 2 * padding[a] - ks[a]) / stride[a] + 1;
  }
  g.y = {g.x.n, g.k.f, out[0], out[1], out[2]};

  const double* bp = bias.defined() ? bias.data().data() : nullptr;
  auto y = conv_forward(x.data().data(), kernel.data().data(), bp, g);
  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  auto xi = x.impl();
  auto ki = kernel.impl();
  return make_result("conv3d", {g.y.n, g.y.c, g.y.d, g.y.h, g.y.w}, std::move(y), std::move(inputs),
                     [xi, ki, g](std::span<const double> gy, std::span<std::vector<double>*> gi) {
                       if (gi[0]) conv_backward_input(gy.data(), ki->data.data(), g, gi[0]->data());
                       if (gi[1]) conv_backward_kernel(xi->data.data(), gy.data(), g, gi[1]->data());
                       if (gi.size() > 2 && gi[2]) bias_grad(gy.data(), g.y, gi[2]->data());
                     });
}

Tensor conv3d_down(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.shape().size() != 5) fail(ErrorCode::ShapeMismatch, "conv3d_down: input must be [N,C,D,H,W]");
  if (kernel.shape().size() != 5 || kernel.dim(2) != 2 || kernel.dim(3) != 2 || kernel.dim(4) != 2) {
    fail(ErrorCode::ShapeMismatch, "conv3d_down: kernel must be [F,C,2,2,2]");
  }
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.dim(a) % 2 != 0) fail(ErrorCode::OddExtent, "conv3d_down: spatial extents must be even");
  }
  return conv3d(x, kernel, bias, {2, 2, 2}, {0, 0, 0});
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const Triple& stride) {
  check_conv_args(x, kernel, bias, kernel.defined() && kernel.shape().size() == 5 ? kernel.dim(1) : 0, "conv_transpose3d");
  const Dims xd = dims_of(x);
  const KDims kd = kdims_of(kernel);
  if (kd.f != xd.c) fail(ErrorCode::ShapeMismatch, "conv_transpose3d: kernel input channels do not match");
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) fail(ErrorCode::ShapeMismatch, "conv_transpose3d: stride must be >= 1");
  }
  // Geometry of the forward convolution this operator is the adjoint of.
  ConvGeometry g;
  g.k = kd;
  g.stride = stride;
  g.padding = {0, 0, 0};
  g.y = xd;
  g.x = {xd.n, kd.c, (xd.d - 1) * stride[0] + kd.d, (xd.h - 1) * stride[1] + kd.h, (xd.w - 1) * stride[2] + kd.w};

  std::vector<double> y(g.x.count(), 0.0);
  conv_backward_input(x.data().data(), kernel.data().data(), g, y.data());
  if (bias.defined()) {
    for (std::size_t n = 0; n < g.x.n; ++n) {
      for (std::size_t c = 0; c < g.x.c; ++c) {
        double* p = y.data() + (n * g.x.c + c) * g.x.spatial();
        for (std::size_t i = 0; i < g.x.spatial(); ++i) p[i] += bias.data()[c];
      }
    }
  }
  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  auto xi = x.impl();
  auto ki = kernel.impl();
  return make_result("conv_transpose3d", {g.x.n, g.x.c, g.x.d, g.x.h, g.x.w}, std::move(y), std::move(inputs),
                     [xi, ki, g](std::span<const double> gy, std::span<std::vector<double>*> gi) {
                       if (gi[0]) {
                         const auto gx = conv_forward(gy.data(), ki->data.data(), nullptr, g);
                         for (std::size_t i = 0; i < gx.size(); ++i) (*gi[0])[i] += gx[i];
                       }
                       if (gi[1]) conv_backward_kernel(gy.data(), xi->data.data(), g, gi[1]->data());
                       if (gi.size() > 2 && gi[2]) bias_grad(gy.data(), g.x, gi[2]->data());
                     });
}

}  // namespace voxelseg::ad
