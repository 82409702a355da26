// SPDX-License-Identifier: Apache-2.0
//
// Direct convolution kernels over three spatial axes. 2-D convolutions run
// with a leading singleton axis so the innermost loop stays on the widest,
// contiguous axis. Every output element is accumulated in a fixed order.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>

namespace nebla::detail {

struct ConvGeom {
  std::size_t ci = 0;  // input channels of the forward convolution
  std::size_t co = 0;  // output channels of the forward convolution
  std::array<std::size_t, 3> in{}, out{}, k{}, s{}, p{};

  std::size_t in_plane() const { return in[0] * in[1] * in[2]; }
  std::size_t out_plane() const { return out[0] * out[1] * out[2]; }
  std::size_t k_volume() const { return k[0] * k[1] * k[2]; }
};

// Output indices y in [lo, hi) such that y*s + kk - p falls inside [0, in).
inline void valid_range(std::size_t in, std::size_t out, std::size_t kk, std::size_t s, std::size_t p,
                        std::size_t& lo, std::size_t& hi) {
  const long long shift = static_cast<long long>(kk) - static_cast<long long>(p);
  const long long ls = static_cast<long long>(s);
  long long l = 0;
  if (shift < 0) l = (-shift + ls - 1) / ls;
  const long long last = static_cast<long long>(in) - 1 - shift;
  long long h = last < 0 ? 0 : last / ls + 1;
  h = std::min<long long>(h, static_cast<long long>(out));
  lo = static_cast<std::size_t>(std::min(l, h));
  hi = static_cast<std::size_t>(h);
}

template <typename T>
inline T dot_lanes(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// Visits every (weight, output row) pair; `fn(w_index, in_row_offset, out_row_offset, lo2, hi2, shift2)`
// where the input element for output column y2 is in_row[y2*s2 + shift2].
template <typename Fn>
inline void for_each_row(const ConvGeom& g, Fn&& fn) {
  std::array<std::size_t, 3> lo{}, hi{};
  for (std::size_t co = 0; co < g.co; ++co) {
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      for (std::size_t k0 = 0; k0 < g.k[0]; ++k0) {
        valid_range(g.in[0], g.out[0], k0, g.s[0], g.p[0], lo[0], hi[0]);
        for (std::size_t k1 = 0; k1 < g.k[1]; ++k1) {
          valid_range(g.in[1], g.out[1], k1, g.s[1], g.p[1], lo[1], hi[1]);
          for (std::size_t k2 = 0; k2 < g.k[2]; ++k2) {
            valid_range(g.in[2], g.out[2], k2, g.s[2], g.p[2], lo[2], hi[2]);
            if (lo[2] >= hi[2]) continue;
            const std::size_t widx = (((co * g.ci + ci) * g.k[0] + k0) * g.k[1] + k1) * g.k[2] + k2;
            const long long shift2 = static_cast<long long>(k2) - static_cast<long long>(g.p[2]);
            for (std::size_t y0 = lo[0]; y0 < hi[0]; ++y0) {
              const std::size_t x0 = y0 * g.s[0] + k0 - g.p[0];
              for (std::size_t y1 = lo[1]; y1 < hi[1]; ++y1) {
                const std::size_t x1 = y1 * g.s[1] + k1 - g.p[1];
                const std::size_t in_off = ((ci * g.in[0] + x0) * g.in[1] + x1) * g.in[2];
                const std::size_t out_off = ((co * g.out[0] + y0) * g.out[1] + y1) * g.out[2];
                fn(widx, in_off, out_off, lo[2], hi[2], shift2);
              }
            }
          }
        }
      }
    }
  }
}

// y += conv(x, w)
template <typename T>
void conv_forward(const T* x, const T* w, T* y, const ConvGeom& g) {
  const std::size_t s2 = g.s[2];
  for_each_row(g, [&](std::size_t widx, std::size_t in_off, std::size_t out_off, std::size_t lo, std::size_t hi,
                      long long shift) {
    const T wv = w[widx];
    T* __restrict yr = y + out_off;
    const T* xr = x + in_off;
    if (s2 == 1) {
      const T* __restrict xs = xr + shift;
      for (std::size_t y2 = lo; y2 < hi; ++y2) yr[y2] += wv * xs[y2];
    } else {
      for (std::size_t y2 = lo; y2 < hi; ++y2) yr[y2] += wv * xr[static_cast<long long>(y2 * s2) + shift];
    }
  });
}

// dx += conv^T(dy, w)
template <typename T>
void conv_backward_input(const T* dy, const T* w, T* dx, const ConvGeom& g) {
  const std::size_t s2 = g.s[2];
  for_each_row(g, [&](std::size_t widx, std::size_t in_off, std::size_t out_off, std::size_t lo, std::size_t hi,
                      long long shift) {
    const T wv = w[widx];
    const T* __restrict dyr = dy + out_off;
    T* dxr = dx + in_off;
    if (s2 == 1) {
      T* __restrict dxs = dxr + shift;
      for (std::size_t y2 = lo; y2 < hi; ++y2) dxs[y2] += wv * dyr[y2];
    } else {
      for (std::size_t y2 = lo; y2 < hi; ++y2) dxr[static_cast<long long>(y2 * s2) + shift] += wv * dyr[y2];
    }
  });
}

// dw += sum over outputs of dy * x
template <typename T>
void conv_backward_weight(const T* x, const T* dy, T* dw, const ConvGeom& g) {
  const std::size_t s2 = g.s[2];
  for_each_row(g, [&](std::size_t widx, std::size_t in_off, std::size_t out_off, std::size_t lo, std::size_t hi,
                      long long shift) {
    const T* dyr = dy + out_off;
    const T* xr = x + in_off;
    T acc = 0;
    if (s2 == 1) {
      acc = dot_lanes(dyr + lo, xr + shift + static_cast<long long>(lo), hi - lo);
    } else {
      for (std::size_t y2 = lo; y2 < hi; ++y2) acc += dyr[y2] * xr[static_cast<long long>(y2 * s2) + shift];
    }
    dw[widx] += acc;
  });
}

}  // namespace nebla::detail
