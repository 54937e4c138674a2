// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention-map visualization and localization metrics: upsample the map to
// image resolution, keep the top fraction of pixels, trace the boundary of
// the kept region and draw it over the image.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "loupe/tensor.hpp"

namespace loupe {

struct BinaryMask {
  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}
  BinaryMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> b);

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  std::size_t popcount() const;
};

/// Corner of the pixel grid: vertex (row, col) sits at pixel coordinates
/// (row - 0.5, col - 0.5), so pixel (r, c) is bounded by vertices r..r+1 and
/// c..c+1.
struct Vertex {
  int row = 0;
  int col = 0;
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

/// Closed polyline of unit axis-aligned steps; front() == back().
using Polyline = std::vector<Vertex>;

struct ContourSet {
  std::vector<Polyline> contours;
  /// Number of unit segments over all contours.
  std::size_t total_length() const;
};

/// Half-pixel-center bilinear upsampling of an (N, 1, h, w) map.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& map, std::size_t out_h, std::size_t out_w);

/// Selects exactly ceil(fraction * H * W) pixels, largest values first, ties
/// by ascending row-major index.
template <typename T>
BinaryMask top_fraction_mask(std::span<const T> map, std::size_t h, std::size_t w, double fraction);

/// Boundaries between set pixels and unset pixels or the image border, each
/// traced clockwise with the set region on the right. Diagonal contacts are
/// split into separate loops.
ContourSet trace_contours(const BinaryMask& mask);

/// Writes a binary PPM of a 3 x S x S image in [0, 1] with the pixels just
/// inside each contour painted (0, 255, 0).
void overlay_write(std::span<const float> image, std::size_t height, std::size_t width,
                   const ContourSet& contours, const std::filesystem::path& path);

/// Pixels painted by overlay_write, as a mask.
BinaryMask contour_pixels(const ContourSet& contours, std::size_t height, std::size_t width);

/// Hit when the argmax (lowest row-major index on ties) lies inside gt.
template <typename T>
bool pointing_game(std::span<const T> map, std::size_t h, std::size_t w, const BinaryMask& gt);

/// |pred & gt| / |pred | gt|, 0 when both are empty.
double attention_iou(const BinaryMask& pred, const BinaryMask& gt);

/// Share of the total map mass lying on the outer one-pixel ring.
template <typename T>
double border_mass(std::span<const T> map, std::size_t h, std::size_t w);

}  // namespace loupe
