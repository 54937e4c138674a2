// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <span>
#include <string>

#include "loupe/errors.hpp"
#include "loupe/image_ops.hpp"

namespace loupe {

namespace {

constexpr std::uint64_t kGlyphStream = 0xA24BAED4963EE407ULL;
constexpr int kCropRetries = 32;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth value noise in [0, 1]: random lattice values every `cell` pixels,
// blended with a smoothstep kernel.
void value_noise(std::mt19937_64& rng, std::size_t size, std::size_t cell, std::span<float> out) {
  const std::size_t lattice = size / cell + 2;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> grid(lattice * lattice);
  for (double& g : grid) g = u(rng);
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t gy = y / cell;
    const double ty = smoothstep(static_cast<double>(y % cell) / static_cast<double>(cell));
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t gx = x / cell;
      const double tx = smoothstep(static_cast<double>(x % cell) / static_cast<double>(cell));
      const double a = grid[gy * lattice + gx] * (1 - tx) + grid[gy * lattice + gx + 1] * tx;
      const double b = grid[(gy + 1) * lattice + gx] * (1 - tx) + grid[(gy + 1) * lattice + gx + 1] * tx;
      out[y * size + x] = static_cast<float>(a * (1 - ty) + b * ty);
    }
  }
}

void locate_patch(SyntheticSample& s) {
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    if (s.mask[i]) {
      std::size_t top = s.size, left = s.size;
      for (std::size_t r = 0; r < s.size; ++r) {
        for (std::size_t c = 0; c < s.size; ++c) {
          if (s.mask[r * s.size + c]) {
            top = std::min(top, r);
            left = std::min(left, c);
          }
        }
      }
      s.patch_row = top;
      s.patch_col = left;
      return;
    }
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  os.write(b, 2);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("dataset: truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw IoError("dataset: truncated file");
  return static_cast<std::uint16_t>(b[0] | b[1] << 8);
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("data.num_classes: need at least 2 classes");
  if (num_classes > 65535) throw ConfigError("data.num_classes: too many classes");
  if (image_size < 4 || image_size > 65535) throw ConfigError("data.image_size: out of range");
  if (patch_size < 1) throw ConfigError("data.patch_size: must be positive");
  if (patch_size > image_size / 4) {
    throw ConfigError("data.patch_size: " + std::to_string(patch_size) + " exceeds image_size / 4 = " +
                      std::to_string(image_size / 4));
  }
  for (auto [name, count] : {std::pair{"data.n_train", n_train}, {"data.n_val", n_val}, {"data.n_test", n_test}}) {
    if (count < num_classes) {
      throw ConfigError(std::string(name) + ": " + std::to_string(count) + " is fewer than num_classes");
    }
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ConfigError("data.noise_scale: must be finite and non-negative");
  }
}

float GlyphBank::pixel(std::size_t k, std::size_t ch, std::size_t r, std::size_t c) const {
  return patterns[k][r * patch_size + c] ? foreground[k][ch] : background[k][ch];
}

GlyphBank make_glyphs(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t p = spec.patch_size;
  const std::size_t bits = p * p;
  const std::size_t min_distance = bits / 4;
  std::mt19937_64 rng(splitmix64(spec.seed ^ kGlyphStream));
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<float> bright(0.55f, 1.0f);
  std::uniform_real_distribution<float> dark(0.0f, 0.45f);

  GlyphBank bank;
  bank.patch_size = p;
  while (bank.patterns.size() < spec.num_classes) {
    std::vector<std::uint8_t> pattern(bits);
    for (auto& b : pattern) b = coin(rng) ? 1 : 0;
    const bool far_enough = std::all_of(bank.patterns.begin(), bank.patterns.end(), [&](const auto& other) {
      std::size_t d = 0;
      for (std::size_t i = 0; i < bits; ++i) d += pattern[i] != other[i];
      return d >= min_distance;
    });
    if (far_enough) bank.patterns.push_back(std::move(pattern));
  }
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    bank.foreground.push_back({bright(rng), bright(rng), bright(rng)});
    bank.background.push_back({dark(rng), dark(rng), dark(rng)});
  }
  return bank;
}

SyntheticSample generate_sample(const DatasetSpec& spec, const GlyphBank& glyphs, std::size_t index) {
  const std::size_t s = spec.image_size;
  const std::size_t p = spec.patch_size;
  std::mt19937_64 rng(splitmix64(spec.seed * 0x100000001B3ULL + index));

  SyntheticSample out;
  out.size = s;
  out.label = static_cast<int>(index % spec.num_classes);
  out.image.resize(3 * s * s);
  out.mask.assign(s * s, 0);

  const std::size_t cell = std::max<std::size_t>(4, s / 4);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::span<float> plane(out.image.data() + ch * s * s, s * s);
    value_noise(rng, s, cell, plane);
    for (float& v : plane) {
      v = std::clamp(static_cast<float>(0.5 + spec.noise_scale * (v - 0.5)), 0.0f, 1.0f);
    }
  }

  std::uniform_int_distribution<std::size_t> pos(0, s - p);
  out.patch_row = pos(rng);
  out.patch_col = pos(rng);
  const auto k = static_cast<std::size_t>(out.label);
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < p; ++c) {
      const std::size_t y = out.patch_row + r;
      const std::size_t x = out.patch_col + c;
      out.mask[y * s + x] = 1;
      for (std::size_t ch = 0; ch < 3; ++ch) out.image[(ch * s + y) * s + x] = glyphs.pixel(k, ch, r, c);
    }
  }
  return out;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  const GlyphBank glyphs = make_glyphs(spec);
  Dataset d;
  d.spec = spec;
  std::size_t index = 0;
  for (auto [split, count] : {std::pair{&d.train, spec.n_train}, {&d.val, spec.n_val}, {&d.test, spec.n_test}}) {
    split->reserve(count);
    for (std::size_t i = 0; i < count; ++i) split->push_back(generate_sample(spec, glyphs, index++));
  }
  return d;
}

SyntheticSample flip_horizontal(const SyntheticSample& in) {
  const std::size_t s = in.size;
  SyntheticSample out = in;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) out.image[(ch * s + y) * s + x] = in.image[(ch * s + y) * s + (s - 1 - x)];
    }
  }
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) out.mask[y * s + x] = in.mask[y * s + (s - 1 - x)];
  }
  locate_patch(out);
  return out;
}

SyntheticSample crop(const SyntheticSample& in, std::size_t row, std::size_t col, std::size_t size) {
  if (row + size > in.size || col + size > in.size) throw ArgumentError("crop: window leaves the image");
  const std::size_t s = in.size;
  SyntheticSample out;
  out.size = size;
  out.label = in.label;
  out.image.resize(3 * size * size);
  out.mask.resize(size * size);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < size; ++y) {
      const float* src = in.image.data() + (ch * s + row + y) * s + col;
      std::copy(src, src + size, out.image.data() + (ch * size + y) * size);
    }
  }
  for (std::size_t y = 0; y < size; ++y) {
    const std::uint8_t* src = in.mask.data() + (row + y) * s + col;
    std::copy(src, src + size, out.mask.data() + y * size);
  }
  out.patch_row = in.patch_row >= row ? in.patch_row - row : 0;
  out.patch_col = in.patch_col >= col ? in.patch_col - col : 0;
  locate_patch(out);
  return out;
}

SyntheticSample resize(const SyntheticSample& in, std::size_t size) {
  const std::size_t s = in.size;
  if (size == s) return in;
  SyntheticSample out;
  out.size = size;
  out.label = in.label;
  out.image.resize(3 * size * size);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    resize_bilinear_plane<float>(std::span<const float>(in.image.data() + ch * s * s, s * s), s, s,
                                 std::span<float>(out.image.data() + ch * size * size, size * size), size, size);
  }
  std::vector<float> m(in.mask.begin(), in.mask.end());
  std::vector<float> rm(size * size);
  resize_bilinear_plane<float>(m, s, s, rm, size, size);
  out.mask.resize(size * size);
  for (std::size_t i = 0; i < rm.size(); ++i) out.mask[i] = rm[i] >= 0.5f ? 1 : 0;
  out.patch_row = in.patch_row * size / s;
  out.patch_col = in.patch_col * size / s;
  locate_patch(out);
  return out;
}

SyntheticSample augment(const SyntheticSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg) {
  const std::size_t s = sample.size;
  if (cfg.crop_size > s) {
    throw ConfigError("data.crop_size: " + std::to_string(cfg.crop_size) + " exceeds image size " + std::to_string(s));
  }
  // Glyph extent from the mask; the crop must contain all of it.
  std::size_t top = s, left = s, bottom = 0, right = 0;
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      if (sample.mask[y * s + x]) {
        top = std::min(top, y);
        left = std::min(left, x);
        bottom = std::max(bottom, y + 1);
        right = std::max(right, x + 1);
      }
    }
  }
  const bool has_patch = bottom > 0;
  if (has_patch && (bottom - top > cfg.crop_size || right - left > cfg.crop_size)) {
    throw ConfigError("data.crop_size: smaller than the glyph");
  }

  std::uniform_int_distribution<std::size_t> origin(0, s - cfg.crop_size);
  std::size_t row = 0, col = 0;
  bool found = false;
  for (int attempt = 0; attempt < kCropRetries && !found; ++attempt) {
    row = origin(rng);
    col = origin(rng);
    found = !has_patch || (row <= top && col <= left && row + cfg.crop_size >= bottom &&
                           col + cfg.crop_size >= right);
  }
  if (!found) {
    auto centered = [&](std::size_t lo, std::size_t hi) {
      const std::size_t mid = (lo + hi) / 2;
      const std::size_t half = cfg.crop_size / 2;
      return std::min(mid > half ? mid - half : 0, s - cfg.crop_size);
    };
    row = centered(top, bottom);
    col = centered(left, right);
  }

  SyntheticSample out = cfg.crop_size == s ? sample : crop(sample, row, col, cfg.crop_size);
  std::bernoulli_distribution flip(std::clamp(cfg.flip_prob, 0.0, 1.0));
  if (cfg.flip_prob > 0.0 && flip(rng)) out = flip_horizontal(out);
  return out;
}

SyntheticSample eval_transform(const SyntheticSample& sample, const EvalTransformConfig& cfg) {
  if (cfg.center_crop > cfg.resize_to) {
    throw ConfigError("data.center_crop: " + std::to_string(cfg.center_crop) + " exceeds data.resize_to " +
                      std::to_string(cfg.resize_to));
  }
  if (cfg.center_crop == 0) throw ConfigError("data.center_crop: must be positive");
  SyntheticSample r = resize(sample, cfg.resize_to);
  const std::size_t offset = (cfg.resize_to - cfg.center_crop) / 2;
  return cfg.center_crop == cfg.resize_to ? r : crop(r, offset, offset, cfg.center_crop);
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const DatasetSpec& spec = data.spec;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("dataset: cannot open " + path.string() + " for writing");
  os.write("LFG1", 4);
  for (std::size_t v : {spec.num_classes, spec.image_size, spec.patch_size, data.train.size(), data.val.size(),
                        data.test.size()}) {
    put_u32(os, static_cast<std::uint32_t>(v));
  }
  put_u32(os, static_cast<std::uint32_t>(spec.seed));
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const SyntheticSample& s : *split) {
      put_u16(os, static_cast<std::uint16_t>(s.label));
      put_u16(os, static_cast<std::uint16_t>(s.patch_row));
      put_u16(os, static_cast<std::uint16_t>(s.patch_col));
      for (float v : s.image) put_u32(os, std::bit_cast<std::uint32_t>(v));
      os.write(reinterpret_cast<const char*>(s.mask.data()), static_cast<std::streamsize>(s.mask.size()));
    }
  }
  if (!os) throw IoError("dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dataset: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "LFG1") throw IoError("dataset: bad magic in " + path.string());
  Dataset d;
  d.spec.num_classes = get_u32(is);
  d.spec.image_size = get_u32(is);
  d.spec.patch_size = get_u32(is);
  d.spec.n_train = get_u32(is);
  d.spec.n_val = get_u32(is);
  d.spec.n_test = get_u32(is);
  d.spec.seed = get_u32(is);
  const std::size_t s = d.spec.image_size;
  for (auto [split, count] : {std::pair{&d.train, d.spec.n_train}, {&d.val, d.spec.n_val}, {&d.test, d.spec.n_test}}) {
    split->resize(count);
    for (SyntheticSample& smp : *split) {
      smp.size = s;
      smp.label = get_u16(is);
      smp.patch_row = get_u16(is);
      smp.patch_col = get_u16(is);
      smp.image.resize(3 * s * s);
      for (float& v : smp.image) v = std::bit_cast<float>(get_u32(is));
      smp.mask.resize(s * s);
      if (!is.read(reinterpret_cast<char*>(smp.mask.data()), static_cast<std::streamsize>(s * s))) {
        throw IoError("dataset: truncated file " + path.string());
      }
      if (smp.label < 0 || static_cast<std::size_t>(smp.label) >= d.spec.num_classes) {
        throw IoError("dataset: label out of range in " + path.string());
      }
    }
  }
  return d;
}

}  // namespace loupe
