// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace loupe {

void LossConfig::validate() const {
  if (!std::isfinite(lambda)) throw ConfigError("loss.lambda: must be finite");
  if (lambda < 0.0) throw ConfigError("loss.lambda: must be non-negative, got " + std::to_string(lambda));
}

template <typename T>
CompositeLoss<T> composite_loss(Var<T> logits, std::span<const int> labels,
                                std::optional<Var<T>> map, const LossConfig& cfg) {
  cfg.validate();
  CompositeLoss<T> out;
  Var<T> ce = softmax_cross_entropy(logits, labels);
  out.ce = static_cast<double>(ce.value()[0]);
  out.total = ce;
  if (!map) return out;
  Var<T> sparsity = l1_reduce(*map, cfg.l1_mode);
  out.sparsity = static_cast<double>(sparsity.value()[0]);
  if (cfg.lambda == 0.0) return out;
  out.total = add_scaled(ce, sparsity, static_cast<T>(cfg.lambda));
  return out;
}

template <typename T>
OptimState<T> make_optim_state(std::span<Parameter<T>* const> params, const LionConfig& hp) {
  OptimState<T> st;
  st.hp = hp;
  st.momentum.reserve(params.size());
  for (const Parameter<T>* p : params) st.momentum.emplace_back(p->value.shape());
  return st;
}

template <typename T>
void lion_step(std::span<Parameter<T>* const> params, OptimState<T>& state) {
  if (params.size() != state.momentum.size()) {
    throw StateError("lion_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(state.momentum.size()) + " momentum buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (p.value.shape() != state.momentum[i].shape() || p.grad.shape() != p.value.shape()) {
      throw StateError("lion_step: shape mismatch for " + p.name);
    }
  }

  const T lr = static_cast<T>(state.hp.lr);
  const T wd = static_cast<T>(state.hp.weight_decay);
  const T b1 = static_cast<T>(state.hp.beta1);
  const T b2 = static_cast<T>(state.hp.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* theta = params[i]->value.ptr();
    const T* g = params[i]->grad.ptr();
    T* m = state.momentum[i].ptr();
    const std::size_t n = params[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      const T c = b1 * m[j] + (T(1) - b1) * g[j];
      const T sgn = c > T(0) ? T(1) : (c < T(0) ? T(-1) : T(0));
      theta[j] -= lr * (sgn + wd * theta[j]);
      m[j] = b2 * m[j] + (T(1) - b2) * g[j];
    }
  }
  ++state.step;
}

void ScheduleConfig::validate() const {
  if (total_epochs < 1) throw ConfigError("schedule.epochs: must be at least 1");
  if (patience < 1) throw ConfigError("schedule.patience: must be at least 1");
  if (batch_size < 1) throw ConfigError("schedule.batch_size: must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("optim.lr: must be positive");
  if (!(min_lr >= 0.0) || !std::isfinite(min_lr)) throw ConfigError("schedule.min_lr: must be non-negative");
}

double cosine_lr(std::size_t epoch, const ScheduleConfig& cfg) {
  if (epoch > cfg.total_epochs) {
    throw ArgumentError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(cfg.total_epochs) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.total_epochs);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(phase));
}

bool early_stop(std::span<const double> history, std::size_t patience) {
  if (patience == 0) throw ArgumentError("early_stop: patience must be positive");
  if (history.size() <= patience) return false;
  const std::size_t first = history.size() - patience;
  const double best = *std::max_element(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(first));
  return std::none_of(history.begin() + static_cast<std::ptrdiff_t>(first), history.end(),
                      [best](double v) { return v > best; });
}

template CompositeLoss<float> composite_loss<float>(Var<float>, std::span<const int>, std::optional<Var<float>>, const LossConfig&);
template CompositeLoss<double> composite_loss<double>(Var<double>, std::span<const int>, std::optional<Var<double>>, const LossConfig&);
template OptimState<float> make_optim_state<float>(std::span<Parameter<float>* const>, const LionConfig&);
template OptimState<double> make_optim_state<double>(std::span<Parameter<double>* const>, const LionConfig&);
template void lion_step<float>(std::span<Parameter<float>* const>, OptimState<float>&);
template void lion_step<double>(std::span<Parameter<double>* const>, OptimState<double>&);

}  // namespace loupe
