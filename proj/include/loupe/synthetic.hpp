// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic fine-grained classification task. Every image is smooth value
// noise with one P x P class glyph pasted at a uniformly random location; the
// glyph is the only label-dependent content, and its footprint is returned as
// a ground-truth mask.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace loupe {

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  double noise_scale = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
  std::size_t total() const noexcept { return n_train + n_val + n_test; }
};

struct SyntheticSample {
  std::size_t size = 0;             // square side S
  std::vector<float> image;         // 3 x S x S, values in [0, 1]
  int label = 0;
  std::vector<std::uint8_t> mask;   // S x S, 1 inside the glyph footprint
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<SyntheticSample> train, val, test;
};

/// Per-class P x P binary patterns with fixed foreground/background colors.
struct GlyphBank {
  std::size_t patch_size = 0;
  std::vector<std::vector<std::uint8_t>> patterns;
  std::vector<std::array<float, 3>> foreground;
  std::vector<std::array<float, 3>> background;

  /// Color of glyph pixel (r, c) of class k in channel ch.
  float pixel(std::size_t k, std::size_t ch, std::size_t r, std::size_t c) const;
};

/// Patterns are drawn by rejection until every pair differs in at least
/// P^2 / 4 bits.
GlyphBank make_glyphs(const DatasetSpec& spec);

/// Sample `index` of the concatenated train/val/test sequence. Pure in
/// (spec, index); the label is index mod K.
SyntheticSample generate_sample(const DatasetSpec& spec, const GlyphBank& glyphs, std::size_t index);

Dataset generate(const DatasetSpec& spec);

struct AugmentConfig {
  std::size_t crop_size = 56;
  double flip_prob = 0.5;
};

/// Random crop_size x crop_size crop that keeps the whole glyph (re-sampled
/// up to a fixed number of times, then centered on the glyph), followed by a
/// horizontal flip with probability flip_prob. Image and mask move together.
SyntheticSample augment(const SyntheticSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg);

SyntheticSample flip_horizontal(const SyntheticSample& sample);
SyntheticSample crop(const SyntheticSample& sample, std::size_t row, std::size_t col, std::size_t size);
/// Bilinear resize of image and mask; the mask is re-binarized at 0.5.
SyntheticSample resize(const SyntheticSample& sample, std::size_t size);

struct EvalTransformConfig {
  std::size_t resize_to = 64;
  std::size_t center_crop = 64;
};

SyntheticSample eval_transform(const SyntheticSample& sample, const EvalTransformConfig& cfg);

/// Little-endian "LFG1" container; see README for the layout.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace loupe
