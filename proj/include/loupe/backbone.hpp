// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical convolutional classifier with the stage geometry of a
// four-stage patch-merging vision transformer:
//
//   stride-p patch embed -> stage 1 -> merge -> stage 2 -> [Loupe] -> merge
//   -> stage 3 -> merge -> stage 4 -> global average pool -> linear head
//
// Stage s runs at S / (p * 2^(s-1)) resolution with C1 * 2^(s-1) channels.
// Each stage block is a pre-activation residual unit
// x + conv3x3(relu(conv3x3(relu(x)))).

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "loupe/autodiff.hpp"
#include "loupe/loupe_module.hpp"

namespace loupe {

struct BackboneConfig {
  std::size_t input_size = 64;
  std::size_t in_channels = 3;
  std::size_t patch_size = 4;
  std::size_t base_channels = 16;
  std::array<std::size_t, 4> blocks_per_stage{1, 1, 1, 1};
  std::size_t num_classes = 10;
  bool loupe_enabled = true;
  std::size_t insertion_stage = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// s in 1..4.
  std::size_t stage_channels(std::size_t s) const { return base_channels << (s - 1); }
  std::size_t stage_size(std::size_t s) const { return input_size / (patch_size << (s - 1)); }

  static BackboneConfig desk();
  /// 224-pixel input, C1 = 128, stage depths 2/2/18/2, 200 classes.
  static BackboneConfig paper_scale();
};

template <typename T>
struct ResidualBlockParams {
  Parameter<T> conv1_w, conv1_b, conv2_w, conv2_b;
};

template <typename T>
struct MergeParams {
  Parameter<T> w, b;
};

template <typename T>
struct ModelState {
  BackboneConfig config;
  Parameter<T> embed_w, embed_b;
  std::array<std::vector<ResidualBlockParams<T>>, 4> stages;
  std::array<MergeParams<T>, 3> merges;
  /// Always allocated so that the backbone draws the same random stream with
  /// or without the module; only used when config.loupe_enabled.
  LoupeParams<T> loupe;
  Parameter<T> head_w, head_b;
  std::uint64_t step = 0;

  /// Every parameter in a fixed order: embed, stages and merges in pipeline
  /// order, Loupe (when enabled), head.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

  void zero_grad();
};

/// Deterministic initialization from config.seed.
template <typename T>
ModelState<T> build(const BackboneConfig& config);

/// Converts parameter values to another precision.
template <typename To, typename From>
ModelState<To> convert(const ModelState<From>& state);

struct ParamCount {
  std::size_t backbone = 0;
  std::size_t loupe = 0;
  double ratio = 0.0;  // loupe / (backbone + loupe)
};

template <typename T>
ParamCount count_params(const ModelState<T>& state);

template <typename T>
struct ForwardResult {
  Var<T> logits;
  std::optional<Var<T>> map;
  Var<T> embedded;
  Var<T> stage2;
};

// Pipeline pieces, exposed for composing variants in tests.
template <typename T>
Var<T> embed(ModelState<T>& state, Var<T> images);
/// Runs the residual blocks of stage s (1..4).
template <typename T>
Var<T> run_stage(ModelState<T>& state, std::size_t s, Var<T> x);
/// Patch merge following stage s (1..3).
template <typename T>
Var<T> merge_after(ModelState<T>& state, std::size_t s, Var<T> x);
template <typename T>
Var<T> classify(ModelState<T>& state, Var<T> x);

template <typename T>
ForwardResult<T> forward(ModelState<T>& state, Var<T> images);

}  // namespace loupe
