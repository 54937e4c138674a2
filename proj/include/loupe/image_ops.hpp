// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace loupe {

/// Bilinear resampling of one row-major plane with half-pixel centers:
/// source coordinate = (dst + 0.5) * in / out - 0.5, clamped to the valid
/// range. Equal sizes reproduce the input exactly.
template <typename T>
void resize_bilinear_plane(std::span<const T> src, std::size_t in_h, std::size_t in_w,
                           std::span<T> dst, std::size_t out_h, std::size_t out_w) {
  auto axis = [](std::size_t d, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1,
                 double& frac) {
    double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const double f = std::floor(s);
    i0 = static_cast<std::size_t>(f);
    i1 = std::min(i0 + 1, in - 1);
    frac = s - f;
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, in_h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, in_w, out_w, x0, x1, fx);
      const double top = static_cast<double>(src[y0 * in_w + x0]) * (1.0 - fx) +
                         static_cast<double>(src[y0 * in_w + x1]) * fx;
      const double bottom = static_cast<double>(src[y1 * in_w + x0]) * (1.0 - fx) +
                            static_cast<double>(src[y1 * in_w + x1]) * fx;
      dst[y * out_w + x] = static_cast<T>(top * (1.0 - fy) + bottom * fy);
    }
  }
}

}  // namespace loupe
