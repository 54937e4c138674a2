// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spatial attention that reweights every position of a feature map:
//
//   M = sigmoid(conv1x1(relu(conv3x3(F))))      one channel, same H x W as F
//   F_refined = F * M                           broadcast over channels
//
// Gradients reaching F through the product are scaled by M, so positions the
// map suppresses contribute little to the backbone's updates.

#pragma once

#include <cstddef>
#include <random>

#include "loupe/autodiff.hpp"

namespace loupe {

/// Hidden width of the 3x3 stage: max(1, C / 4).
std::size_t loupe_hidden_channels(std::size_t channels);

/// 9 * C * h + 2 * h + 1 with h = loupe_hidden_channels(C).
std::size_t loupe_param_count(std::size_t channels);

template <typename T>
struct LoupeParams {
  std::size_t channels = 0;
  Parameter<T> w1;  // (h, C, 3, 3)
  Parameter<T> b1;  // (h, 1, 1, 1)
  Parameter<T> w2;  // (1, h, 1, 1)
  Parameter<T> b2;  // (1, 1, 1, 1)

  std::size_t size() const noexcept { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

/// w1 ~ N(0, 2 / (9C)), everything else zero: the initial map is exactly 0.5.
template <typename T>
LoupeParams<T> make_loupe_params(std::size_t channels, std::mt19937_64& rng);

/// Returns the (N, 1, H, W) attention map for (N, C, H, W) features.
template <typename T>
Var<T> attention_forward(Var<T> features, LoupeParams<T>& params);

template <typename T>
Var<T> refine(Var<T> features, Var<T> map) {
  return broadcast_mul(features, map);
}

}  // namespace loupe
