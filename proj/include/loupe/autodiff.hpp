// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over 4-d tensors. A Graph records
// every operation in execution order; backward() replays the adjoints in
// reverse. Graphs are single-threaded; separate graphs may run concurrently
// as long as they only read shared parameters.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "loupe/tensor.hpp"

namespace loupe {

enum class Precision { kSingle, kDouble };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::kSingle : Precision::kDouble;
}

/// A trainable array together with its accumulated gradient.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
  std::size_t size() const noexcept { return value.size(); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn =
      std::function<void(Graph&, const Tensor<T>& out, const Tensor<T>& out_grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  /// Binds a parameter by reference; it must outlive the graph. Gradients
  /// accumulate into p.grad.
  Var<T> param(Parameter<T>& p);

  /// Appends an operation node. The backward function is kept only when some
  /// input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  void backward(Var<T> loss);

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const;
  /// Gradient of a leaf after backward(), or nullptr if none was produced.
  const Tensor<T>* grad(Var<T> v) const;
  /// Accumulation target for the adjoint of v; nullptr when v needs none.
  /// Only meaningful inside a backward function.
  Tensor<T>* grad_slot(Var<T> v);

  /// While enabled, relu folds the sign pattern of its input into
  /// kink_signature(). Two evaluations with equal signatures sit on the same
  /// linear piece of every relu.
  void track_kinks(bool on) noexcept { track_kinks_ = on; }
  bool tracking_kinks() const noexcept { return track_kinks_; }
  std::uint64_t kink_signature() const noexcept { return kink_signature_; }
  void fold_kink_bit(bool positive) noexcept {
    kink_signature_ = (kink_signature_ ^ (positive ? 1u : 0u)) * 0x100000001b3ULL;
  }

  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool backward_done() const noexcept { return backward_done_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_target = nullptr;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  void check(Var<T> v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
};

enum class Pointwise { kRelu, kSigmoid };
enum class L1Mode { kSumPerSample, kMeanPerElement };

struct ConvSpec {
  std::size_t padding = 0;
  std::size_t stride = 1;
};

/// Cross-correlation. weight is (Cout, Cin, k, k), bias is (Cout, 1, 1, 1).
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, ConvSpec spec = {});

template <typename T>
Var<T> pointwise(Var<T> input, Pointwise fn);
template <typename T>
Var<T> relu(Var<T> input) {
  return pointwise(input, Pointwise::kRelu);
}
template <typename T>
Var<T> sigmoid(Var<T> input) {
  return pointwise(input, Pointwise::kSigmoid);
}

/// features (N, C, H, W) times map (N, 1, H, W), broadcast over channels.
template <typename T>
Var<T> broadcast_mul(Var<T> features, Var<T> map);

/// input is flattened per sample to D = C*H*W; weight is (K, D, 1, 1).
template <typename T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias);

/// 2x2 space-to-depth (TL, TR, BL, BR blocks of C channels) followed by a
/// (2C, 4C) projection.
template <typename T>
Var<T> patch_merge(Var<T> input, Var<T> proj_weight, Var<T> proj_bias);

template <typename T>
Var<T> global_avg_pool(Var<T> input);

/// Batch-mean cross-entropy of (N, K, 1, 1) logits.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

template <typename T>
Var<T> l1_reduce(Var<T> map, L1Mode mode);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// a + alpha * b.
template <typename T>
Var<T> add_scaled(Var<T> a, Var<T> b, T alpha);

/// Numerically guarded logistic function; strictly inside (0, 1) for every
/// finite argument.
template <typename T>
T stable_sigmoid(T x) noexcept;

}  // namespace loupe
