// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/loupe_module.hpp"

#include <algorithm>
#include <cmath>

namespace loupe {

std::size_t loupe_hidden_channels(std::size_t channels) {
  if (channels < 1) throw ArgumentError("loupe: channel count must be at least 1");
  return std::max<std::size_t>(1, channels / 4);
}

std::size_t loupe_param_count(std::size_t channels) {
  const std::size_t h = loupe_hidden_channels(channels);
  return 9 * channels * h + 2 * h + 1;
}

template <typename T>
LoupeParams<T> make_loupe_params(std::size_t channels, std::mt19937_64& rng) {
  const std::size_t h = loupe_hidden_channels(channels);
  LoupeParams<T> p;
  p.channels = channels;
  Tensor<T> w1({h, channels, 3, 3});
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (9.0 * static_cast<double>(channels))));
  for (T& v : w1.data()) v = static_cast<T>(normal(rng));
  p.w1 = Parameter<T>("loupe.w1", std::move(w1));
  p.b1 = Parameter<T>("loupe.b1", Tensor<T>({h, 1, 1, 1}));
  p.w2 = Parameter<T>("loupe.w2", Tensor<T>({1, h, 1, 1}));
  p.b2 = Parameter<T>("loupe.b2", Tensor<T>({1, 1, 1, 1}));
  return p;
}

template <typename T>
Var<T> attention_forward(Var<T> features, LoupeParams<T>& params) {
  if (features.shape().c != params.channels) {
    throw DimensionError("attention_forward: channel (C) axis mismatch (got " +
                         std::to_string(features.shape().c) + ", expected " +
                         std::to_string(params.channels) + ")");
  }
  Graph<T>& g = *features.graph;
  Var<T> hidden = relu(conv2d(features, g.param(params.w1), g.param(params.b1), {1, 1}));
  Var<T> logits = conv2d(hidden, g.param(params.w2), g.param(params.b2), {0, 1});
  return sigmoid(logits);
}

template LoupeParams<float> make_loupe_params<float>(std::size_t, std::mt19937_64&);
template LoupeParams<double> make_loupe_params<double>(std::size_t, std::mt19937_64&);
template Var<float> attention_forward<float>(Var<float>, LoupeParams<float>&);
template Var<double> attention_forward<double>(Var<double>, LoupeParams<double>&);

}  // namespace loupe
