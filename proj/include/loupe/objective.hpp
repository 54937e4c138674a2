// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "loupe/autodiff.hpp"

namespace loupe {

struct LossConfig {
  double lambda = 0.05;
  L1Mode l1_mode = L1Mode::kSumPerSample;

  void validate() const;
};

template <typename T>
struct CompositeLoss {
  Var<T> total;
  double ce = 0.0;
  /// Unweighted L1 term; 0 when there is no map.
  double sparsity = 0.0;
};

/// total = CE(logits, labels) + lambda * L1(map). With no map, or lambda == 0,
/// total is the cross-entropy node itself.
template <typename T>
CompositeLoss<T> composite_loss(Var<T> logits, std::span<const int> labels,
                                std::optional<Var<T>> map, const LossConfig& cfg);

struct LionConfig {
  double lr = 1e-5;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.99;
};

template <typename T>
struct OptimState {
  LionConfig hp;
  std::vector<Tensor<T>> momentum;
  std::uint64_t step = 0;
};

template <typename T>
OptimState<T> make_optim_state(std::span<Parameter<T>* const> params, const LionConfig& hp);

/// One Lion update per parameter:
///   c = b1 * m + (1 - b1) * g
///   theta -= lr * (sign(c) + wd * theta)
///   m = b2 * m + (1 - b2) * g
/// with sign(0) = 0.
template <typename T>
void lion_step(std::span<Parameter<T>* const> params, OptimState<T>& state);

struct ScheduleConfig {
  double base_lr = 3e-4;
  std::size_t total_epochs = 50;
  double min_lr = 0.0;
  std::size_t patience = 5;
  /// Early stopping is not consulted before this many epochs have run.
  std::size_t min_epochs = 15;
  std::size_t batch_size = 32;

  void validate() const;
};

/// Half-cosine from base_lr at epoch 0 to min_lr at epoch total_epochs.
double cosine_lr(std::size_t epoch, const ScheduleConfig& cfg);

/// True when each of the last `patience` entries fails to strictly exceed the
/// best value recorded before it.
bool early_stop(std::span<const double> history, std::size_t patience);

}  // namespace loupe
