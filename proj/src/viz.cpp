// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/viz.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "loupe/image_ops.hpp"

namespace loupe {

BinaryMask::BinaryMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> b)
    : height(h), width(w), bits(std::move(b)) {
  if (bits.size() != h * w) throw DimensionError("mask: bit count does not match " + std::to_string(h) + "x" + std::to_string(w));
}

std::size_t BinaryMask::popcount() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

std::size_t ContourSet::total_length() const {
  std::size_t n = 0;
  for (const Polyline& p : contours) n += p.empty() ? 0 : p.size() - 1;
  return n;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& map, std::size_t out_h, std::size_t out_w) {
  const Shape s = map.shape();
  if (s.c != 1) throw DimensionError("upsample_bilinear: map must have one channel, got " + s.str());
  if (out_h < s.h || out_w < s.w) {
    throw ArgumentError("upsample_bilinear: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                        " is smaller than the source " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  Tensor<T> out({s.n, 1, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    resize_bilinear_plane<T>(map.data().subspan(n * s.spatial(), s.spatial()), s.h, s.w,
                             out.data().subspan(n * out_h * out_w, out_h * out_w), out_h, out_w);
  }
  return out;
}

template <typename T>
BinaryMask top_fraction_mask(std::span<const T> map, std::size_t h, std::size_t w, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("top_fraction_mask: fraction must lie in (0, 1]");
  if (map.size() != h * w) throw DimensionError("top_fraction_mask: map size does not match " + std::to_string(h) + "x" + std::to_string(w));
  const double exact = fraction * static_cast<double>(h * w);
  // Absorbs representation error such as 0.07 * 100 = 7.000000000000001.
  const auto k = std::min(h * w, static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact))));
  std::vector<std::size_t> order(h * w);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return map[a] > map[b] || (map[a] == map[b] && a < b); });
  BinaryMask mask(h, w);
  for (std::size_t i = 0; i < k; ++i) mask.bits[order[i]] = 1;
  return mask;
}

ContourSet trace_contours(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.height);
  const int w = static_cast<int>(mask.width);
  auto set = [&](int r, int c) { return r >= 0 && c >= 0 && r < h && c < w && mask.at(r, c); };

  // Directed boundary edges keyed by their start vertex; the set pixel is on
  // the right of the direction of travel (rows grow downward).
  struct Edge {
    Vertex from;
    int dr, dc;
    bool used = false;
  };
  std::vector<Edge> edges;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!set(r, c)) continue;
      if (!set(r - 1, c)) edges.push_back({{r, c}, 0, 1});
      if (!set(r, c + 1)) edges.push_back({{r, c + 1}, 1, 0});
      if (!set(r + 1, c)) edges.push_back({{r + 1, c + 1}, 0, -1});
      if (!set(r, c - 1)) edges.push_back({{r + 1, c}, -1, 0});
    }
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> outgoing;
  for (std::size_t i = 0; i < edges.size(); ++i) outgoing[{edges[i].from.row, edges[i].from.col}].push_back(i);

  ContourSet out;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (edges[start].used) continue;
    Polyline line{edges[start].from};
    std::size_t cur = start;
    while (true) {
      Edge& e = edges[cur];
      e.used = true;
      const Vertex next{e.from.row + e.dr, e.from.col + e.dc};
      line.push_back(next);
      if (next == edges[start].from) break;
      const auto& candidates = outgoing[{next.row, next.col}];
      // At a saddle vertex prefer the right turn so diagonal neighbours close
      // separate loops.
      const int right_dr = e.dc, right_dc = -e.dr;
      std::size_t chosen = edges.size();
      for (std::size_t cand : candidates) {
        if (edges[cand].used) continue;
        if (edges[cand].dr == right_dr && edges[cand].dc == right_dc) {
          chosen = cand;
          break;
        }
        if (chosen == edges.size()) chosen = cand;
      }
      if (chosen == edges.size()) break;  // unreachable for well-formed boundaries
      cur = chosen;
    }
    out.contours.push_back(std::move(line));
  }
  return out;
}

BinaryMask contour_pixels(const ContourSet& contours, std::size_t height, std::size_t width) {
  BinaryMask m(height, width);
  for (const Polyline& line : contours.contours) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const Vertex a = line[i];
      const int dr = line[i + 1].row - a.row;
      const int dc = line[i + 1].col - a.col;
      int r = a.row, c = a.col;
      if (dr == 1) c -= 1;                  // moving down along a right side
      else if (dc == -1) { r -= 1; c -= 1; }  // moving left along a bottom side
      else if (dr == -1) r -= 1;            // moving up along a left side
      if (r >= 0 && c >= 0 && r < static_cast<int>(height) && c < static_cast<int>(width)) {
        m.bits[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] = 1;
      }
    }
  }
  return m;
}

void overlay_write(std::span<const float> image, std::size_t height, std::size_t width,
                   const ContourSet& contours, const std::filesystem::path& path) {
  if (image.size() != 3 * height * width) throw DimensionError("overlay_write: image must be 3 x H x W");
  const BinaryMask paint = contour_pixels(contours, height, width);
  std::vector<unsigned char> rgb(3 * height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t px = y * width + x;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        unsigned char v;
        if (paint.bits[px]) {
          v = ch == 1 ? 255 : 0;
        } else {
          const float f = std::clamp(image[ch * height * width + px], 0.0f, 1.0f);
          v = static_cast<unsigned char>(std::lround(255.0f * f));
        }
        rgb[3 * px + ch] = v;
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("overlay_write: cannot open " + path.string());
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw IoError("overlay_write: write failed for " + path.string());
}

template <typename T>
bool pointing_game(std::span<const T> map, std::size_t h, std::size_t w, const BinaryMask& gt) {
  if (gt.height != h || gt.width != w || map.size() != h * w) {
    throw DimensionError("pointing_game: map " + std::to_string(h) + "x" + std::to_string(w) + " vs mask " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  // max_element returns the first maximum, i.e. the lowest row-major index.
  const auto best = static_cast<std::size_t>(std::max_element(map.begin(), map.end()) - map.begin());
  return gt.bits[best] != 0;
}

double attention_iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("attention_iou: mask shapes differ");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
double border_mass(std::span<const T> map, std::size_t h, std::size_t w) {
  double total = 0, ring = 0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = std::abs(static_cast<double>(map[r * w + c]));
      total += v;
      if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) ring += v;
    }
  }
  return total > 0 ? ring / total : 0.0;
}

#define LOUPE_INSTANTIATE(T)                                                                          \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, std::size_t, std::size_t);               \
  template BinaryMask top_fraction_mask<T>(std::span<const T>, std::size_t, std::size_t, double);    \
  template bool pointing_game<T>(std::span<const T>, std::size_t, std::size_t, const BinaryMask&);   \
  template double border_mass<T>(std::span<const T>, std::size_t, std::size_t);

LOUPE_INSTANTIATE(float)
LOUPE_INSTANTIATE(double)
#undef LOUPE_INSTANTIATE

}  // namespace loupe
