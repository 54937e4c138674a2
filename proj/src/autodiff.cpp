// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace loupe {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::string axis_mismatch(const char* op, const char* axis, std::size_t got, std::size_t want) {
  return std::string(op) + ": " + axis + " axis mismatch (got " + std::to_string(got) +
         ", expected " + std::to_string(want) + ")";
}

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
void require_bias(const Shape& bias, std::size_t cout, const char* op) {
  if (bias.n != cout || bias.c != 1 || bias.h != 1 || bias.w != 1) {
    throw DimensionError(std::string(op) + ": bias must be (" + std::to_string(cout) +
                         ", 1, 1, 1), got " + bias.str());
  }
}

// Column layout: row (ci * k + ky) * k + kx, column oy * out_w + ox.
template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t stride, std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* plane = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t stride, std::size_t out_h, std::size_t out_w,
                T* dx) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    T* plane = dx + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename T>
void Graph<T>::check(Var<T> v) const {
  if (v.graph != this || v.id >= nodes_.size()) {
    throw ContractError("variable does not belong to this graph");
  }
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (p.grad.shape() != p.value.shape()) {
    p.grad = Tensor<T>(p.value.shape());
  }
  Node node;
  node.external = &p.value;
  node.requires_grad = grad_enabled_;
  node.grad_target = grad_enabled_ ? &p.grad : nullptr;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                        BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (const Var<T>& in : inputs) {
    check(in);
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  node.requires_grad = node.requires_grad && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  check(v);
  return nodes_[v.id].value();
}

template <typename T>
bool Graph<T>::requires_grad(Var<T> v) const {
  check(v);
  return nodes_[v.id].requires_grad;
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var<T> v) const {
  check(v);
  const Node& node = nodes_[v.id];
  if (node.grad_target) return node.grad_target;
  return node.grad.empty() ? nullptr : &node.grad;
}

template <typename T>
Tensor<T>* Graph<T>::grad_slot(Var<T> v) {
  check(v);
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return nullptr;
  if (node.grad_target) return node.grad_target;
  if (node.grad.empty()) node.grad = Tensor<T>(node.value().shape());
  return &node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  check(loss);
  if (nodes_[loss.id].value().size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        nodes_[loss.id].value().shape().str());
  }
  if (backward_done_) {
    throw StateError("backward: graph has already been differentiated");
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;

  (*grad_slot(loss))[0] += T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, node.value(), node.grad);
  }
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------
// Operations

template <typename T>
T stable_sigmoid(T x) noexcept {
  T s;
  if (x >= T(0)) {
    s = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T(1) + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::clamp(s, lo, hi);
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, ConvSpec spec) {
  require_same_graph(input, weight, "conv2d");
  require_same_graph(input, bias, "conv2d");
  const Tensor<T>& x = input.value();
  const Tensor<T>& wt = weight.value();
  const Shape xs = x.shape();
  const Shape ws = wt.shape();
  if (ws.h != ws.w) throw DimensionError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != xs.c) throw DimensionError(axis_mismatch("conv2d", "channel (C)", xs.c, ws.c));
  require_bias<T>(bias.value().shape(), ws.n, "conv2d");
  if (spec.stride == 0) throw ArgumentError("conv2d: stride must be positive");
  const std::size_t k = ws.h;
  const std::size_t stride = spec.stride;
  const std::size_t pad = spec.padding;
  if (xs.h + 2 * pad < k || (xs.h + 2 * pad - k) % stride != 0) {
    throw DimensionError("conv2d: height (H) axis " + std::to_string(xs.h) +
                         " incompatible with kernel " + std::to_string(k) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(pad));
  }
  if (xs.w + 2 * pad < k || (xs.w + 2 * pad - k) % stride != 0) {
    throw DimensionError("conv2d: width (W) axis " + std::to_string(xs.w) +
                         " incompatible with kernel " + std::to_string(k) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(pad));
  }
  require_finite(x, "conv2d");

  const std::size_t out_h = (xs.h + 2 * pad - k) / stride + 1;
  const std::size_t out_w = (xs.w + 2 * pad - k) / stride + 1;
  const std::size_t cout = ws.n;
  const std::size_t rows = xs.c * k * k;
  const std::size_t cols = out_h * out_w;

  std::vector<T> col(xs.n * rows * cols);
  Tensor<T> out({xs.n, cout, out_h, out_w});
  ConstMatMap<T> wmat(wt.ptr(), cout, rows);
  const T* b = bias.value().ptr();
  for (std::size_t n = 0; n < xs.n; ++n) {
    T* col_n = col.data() + n * rows * cols;
    im2col(x.ptr() + n * xs.c * xs.spatial(), xs.c, xs.h, xs.w, k, pad, stride, out_h, out_w,
           col_n);
    MatMap<T> omat(out.ptr() + n * cout * cols, cout, cols);
    omat.noalias() = wmat * ConstMatMap<T>(col_n, rows, cols);
    for (std::size_t co = 0; co < cout; ++co) omat.row(co).array() += b[co];
  }

  return input.graph->record(
      std::move(out), {input, weight, bias},
      [input, weight, bias, col = std::move(col), xs, k, pad, stride, out_h, out_w, cout, rows,
       cols](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dout) {
        Tensor<T>* dx = g.grad_slot(input);
        Tensor<T>* dw = g.grad_slot(weight);
        Tensor<T>* db = g.grad_slot(bias);
        ConstMatMap<T> wmat(g.value(weight).ptr(), cout, rows);
        std::vector<T> dcol(dx ? rows * cols : 0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          ConstMatMap<T> dmat(dout.ptr() + n * cout * cols, cout, cols);
          ConstMatMap<T> cmat(col.data() + n * rows * cols, rows, cols);
          if (dw) MatMap<T>(dw->ptr(), cout, rows).noalias() += dmat * cmat.transpose();
          if (db) {
            for (std::size_t co = 0; co < cout; ++co) (*db)[co] += dmat.row(co).sum();
          }
          if (dx) {
            MatMap<T> dc(dcol.data(), rows, cols);
            dc.noalias() = wmat.transpose() * dmat;
            col2im_add(dcol.data(), xs.c, xs.h, xs.w, k, pad, stride, out_h, out_w,
                       dx->ptr() + n * xs.c * xs.spatial());
          }
        }
      });
}

template <typename T>
Var<T> pointwise(Var<T> input, Pointwise fn) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  if (fn == Pointwise::kRelu) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    if (input.graph->tracking_kinks()) {
      for (std::size_t i = 0; i < x.size(); ++i) input.graph->fold_kink_bit(x[i] > T(0));
    }
    return input.graph->record(
        std::move(out), {input}, [input](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
          Tensor<T>* dx = g.grad_slot(input);
          const Tensor<T>& xv = g.value(input);
          for (std::size_t i = 0; i < d.size(); ++i) {
            if (xv[i] > T(0)) (*dx)[i] += d[i];
          }
        });
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
  return input.graph->record(
      std::move(out), {input}, [input](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& d) {
        Tensor<T>* dx = g.grad_slot(input);
        for (std::size_t i = 0; i < d.size(); ++i) (*dx)[i] += d[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
Var<T> broadcast_mul(Var<T> features, Var<T> map) {
  require_same_graph(features, map, "broadcast_mul");
  const Tensor<T>& f = features.value();
  const Tensor<T>& m = map.value();
  const Shape fs = f.shape();
  const Shape ms = m.shape();
  if (ms.c != 1) throw DimensionError(axis_mismatch("broadcast_mul", "map channel (C)", ms.c, 1));
  if (ms.n != fs.n) throw DimensionError(axis_mismatch("broadcast_mul", "batch (N)", ms.n, fs.n));
  if (ms.h != fs.h) throw DimensionError(axis_mismatch("broadcast_mul", "height (H)", ms.h, fs.h));
  if (ms.w != fs.w) throw DimensionError(axis_mismatch("broadcast_mul", "width (W)", ms.w, fs.w));

  const std::size_t hw = fs.spatial();
  Tensor<T> out(fs);
  for (std::size_t n = 0; n < fs.n; ++n) {
    const T* mp = m.ptr() + n * hw;
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* fp = f.ptr() + (n * fs.c + c) * hw;
      T* op = out.ptr() + (n * fs.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) op[i] = fp[i] * mp[i];
    }
  }
  return features.graph->record(
      std::move(out), {features, map},
      [features, map, fs, hw](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
        Tensor<T>* df = g.grad_slot(features);
        Tensor<T>* dm = g.grad_slot(map);
        const Tensor<T>& fv = g.value(features);
        const Tensor<T>& mv = g.value(map);
        for (std::size_t n = 0; n < fs.n; ++n) {
          const T* mp = mv.ptr() + n * hw;
          for (std::size_t c = 0; c < fs.c; ++c) {
            const std::size_t base = (n * fs.c + c) * hw;
            const T* dp = d.ptr() + base;
            if (df) {
              T* out = df->ptr() + base;
              for (std::size_t i = 0; i < hw; ++i) out[i] += dp[i] * mp[i];
            }
            if (dm) {
              const T* fp = fv.ptr() + base;
              T* out = dm->ptr() + n * hw;
              for (std::size_t i = 0; i < hw; ++i) out[i] += dp[i] * fp[i];
            }
          }
        }
      });
}

template <typename T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias) {
  require_same_graph(input, weight, "linear");
  require_same_graph(input, bias, "linear");
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  const std::size_t d = xs.c * xs.h * xs.w;
  if (ws.h != 1 || ws.w != 1) throw DimensionError("linear: weight must be (K, D, 1, 1), got " + ws.str());
  if (ws.c != d) throw DimensionError(axis_mismatch("linear", "feature (D)", d, ws.c));
  require_bias<T>(bias.shape(), ws.n, "linear");
  const std::size_t k = ws.n;

  Tensor<T> out({xs.n, k, 1, 1});
  MatMap<T> omat(out.ptr(), xs.n, k);
  omat.noalias() = ConstMatMap<T>(input.value().ptr(), xs.n, d) *
                   ConstMatMap<T>(weight.value().ptr(), k, d).transpose();
  const T* b = bias.value().ptr();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t j = 0; j < k; ++j) omat(n, j) += b[j];
  }
  return input.graph->record(
      std::move(out), {input, weight, bias},
      [input, weight, bias, n_rows = xs.n, d, k](Graph<T>& g, const Tensor<T>&,
                                                 const Tensor<T>& dout) {
        ConstMatMap<T> dmat(dout.ptr(), n_rows, k);
        if (Tensor<T>* dx = g.grad_slot(input)) {
          MatMap<T>(dx->ptr(), n_rows, d).noalias() +=
              dmat * ConstMatMap<T>(g.value(weight).ptr(), k, d);
        }
        if (Tensor<T>* dw = g.grad_slot(weight)) {
          MatMap<T>(dw->ptr(), k, d).noalias() +=
              dmat.transpose() * ConstMatMap<T>(g.value(input).ptr(), n_rows, d);
        }
        if (Tensor<T>* db = g.grad_slot(bias)) {
          for (std::size_t n = 0; n < n_rows; ++n) {
            for (std::size_t j = 0; j < k; ++j) (*db)[j] += dmat(n, j);
          }
        }
      });
}

template <typename T>
Var<T> patch_merge(Var<T> input, Var<T> proj_weight, Var<T> proj_bias) {
  require_same_graph(input, proj_weight, "patch_merge");
  require_same_graph(input, proj_bias, "patch_merge");
  const Tensor<T>& x = input.value();
  const Shape xs = x.shape();
  const Shape ws = proj_weight.shape();
  if (xs.h % 2 != 0) throw DimensionError("patch_merge: height (H) axis must be even, got " + std::to_string(xs.h));
  if (xs.w % 2 != 0) throw DimensionError("patch_merge: width (W) axis must be even, got " + std::to_string(xs.w));
  if (ws.h != 1 || ws.w != 1 || ws.n != 2 * xs.c) {
    throw DimensionError("patch_merge: projection must be (" + std::to_string(2 * xs.c) + ", " +
                         std::to_string(4 * xs.c) + ", 1, 1), got " + ws.str());
  }
  if (ws.c != 4 * xs.c) throw DimensionError(axis_mismatch("patch_merge", "channel (C)", ws.c / 4, xs.c));
  require_bias<T>(proj_bias.shape(), ws.n, "patch_merge");

  const std::size_t c = xs.c;
  const std::size_t oh = xs.h / 2;
  const std::size_t ow = xs.w / 2;
  const std::size_t cols = oh * ow;
  const std::size_t rows = 4 * c;
  const std::size_t cout = ws.n;

  // Row q * C + ch of the gathered block holds sub-pixel q (TL, TR, BL, BR).
  auto gather = [=](const T* xn, T* gn) {
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t dy = q / 2;
      const std::size_t dx = q % 2;
      for (std::size_t ch = 0; ch < c; ++ch) {
        T* row = gn + (q * c + ch) * cols;
        const T* plane = xn + ch * xs.h * xs.w;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) row[i * ow + j] = plane[(2 * i + dy) * xs.w + 2 * j + dx];
        }
      }
    }
  };

  std::vector<T> gathered(xs.n * rows * cols);
  Tensor<T> out({xs.n, cout, oh, ow});
  ConstMatMap<T> wmat(proj_weight.value().ptr(), cout, rows);
  const T* b = proj_bias.value().ptr();
  for (std::size_t n = 0; n < xs.n; ++n) {
    T* gn = gathered.data() + n * rows * cols;
    gather(x.ptr() + n * c * xs.spatial(), gn);
    MatMap<T> omat(out.ptr() + n * cout * cols, cout, cols);
    omat.noalias() = wmat * ConstMatMap<T>(gn, rows, cols);
    for (std::size_t co = 0; co < cout; ++co) omat.row(co).array() += b[co];
  }

  return input.graph->record(
      std::move(out), {input, proj_weight, proj_bias},
      [input, proj_weight, proj_bias, gathered = std::move(gathered), xs, c, oh, ow, cols, rows,
       cout](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dout) {
        Tensor<T>* dx = g.grad_slot(input);
        Tensor<T>* dw = g.grad_slot(proj_weight);
        Tensor<T>* db = g.grad_slot(proj_bias);
        ConstMatMap<T> wmat(g.value(proj_weight).ptr(), cout, rows);
        std::vector<T> dg(dx ? rows * cols : 0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          ConstMatMap<T> dmat(dout.ptr() + n * cout * cols, cout, cols);
          if (dw) {
            MatMap<T>(dw->ptr(), cout, rows).noalias() +=
                dmat * ConstMatMap<T>(gathered.data() + n * rows * cols, rows, cols).transpose();
          }
          if (db) {
            for (std::size_t co = 0; co < cout; ++co) (*db)[co] += dmat.row(co).sum();
          }
          if (dx) {
            MatMap<T>(dg.data(), rows, cols).noalias() = wmat.transpose() * dmat;
            T* xn = dx->ptr() + n * c * xs.spatial();
            for (std::size_t q = 0; q < 4; ++q) {
              const std::size_t dy = q / 2;
              const std::size_t dxo = q % 2;
              for (std::size_t ch = 0; ch < c; ++ch) {
                const T* row = dg.data() + (q * c + ch) * cols;
                T* plane = xn + ch * xs.h * xs.w;
                for (std::size_t i = 0; i < oh; ++i) {
                  for (std::size_t j = 0; j < ow; ++j) {
                    plane[(2 * i + dy) * xs.w + 2 * j + dxo] += row[i * ow + j];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> global_avg_pool(Var<T> input) {
  const Tensor<T>& x = input.value();
  const Shape xs = x.shape();
  if (xs.spatial() == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const std::size_t hw = xs.spatial();
  Tensor<T> out({xs.n, xs.c, 1, 1});
  for (std::size_t i = 0; i < xs.n * xs.c; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    out[i] = s / static_cast<T>(hw);
  }
  return input.graph->record(std::move(out), {input},
                             [input, hw](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
                               Tensor<T>* dx = g.grad_slot(input);
                               const T inv = T(1) / static_cast<T>(hw);
                               for (std::size_t i = 0; i < d.size(); ++i) {
                                 for (std::size_t j = 0; j < hw; ++j) (*dx)[i * hw + j] += d[i] * inv;
                               }
                             });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Tensor<T>& z = logits.value();
  const Shape zs = z.shape();
  if (zs.h != 1 || zs.w != 1) throw DimensionError("softmax_cross_entropy: logits must be (N, K, 1, 1), got " + zs.str());
  if (labels.size() != zs.n) throw DimensionError(axis_mismatch("softmax_cross_entropy", "batch (N)", labels.size(), zs.n));
  const std::size_t k = zs.c;
  for (std::size_t n = 0; n < zs.n; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }

  std::vector<T> probs(zs.n * k);
  T total = 0;
  for (std::size_t n = 0; n < zs.n; ++n) {
    const T* row = z.ptr() + n * k;
    const T m = *std::max_element(row, row + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[n * k + j] = std::exp(row[j] - m);
      sum += probs[n * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[n * k + j] /= sum;
    total += std::log(sum) + m - row[labels[n]];
  }
  Tensor<T> out({1, 1, 1, 1}, total / static_cast<T>(zs.n));
  std::vector<int> owned_labels(labels.begin(), labels.end());
  return logits.graph->record(
      std::move(out), {logits},
      [logits, probs = std::move(probs), owned_labels = std::move(owned_labels), n_rows = zs.n,
       k](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
        Tensor<T>* dz = g.grad_slot(logits);
        const T scale_factor = d[0] / static_cast<T>(n_rows);
        for (std::size_t n = 0; n < n_rows; ++n) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = static_cast<std::size_t>(owned_labels[n]) == j ? T(1) : T(0);
            (*dz)[n * k + j] += (probs[n * k + j] - onehot) * scale_factor;
          }
        }
      });
}

template <typename T>
Var<T> l1_reduce(Var<T> map, L1Mode mode) {
  const Tensor<T>& m = map.value();
  const Shape ms = m.shape();
  if (ms.c != 1) throw DimensionError(axis_mismatch("l1_reduce", "channel (C)", ms.c, 1));
  if (ms.n == 0) throw DimensionError("l1_reduce: empty batch");
  T denom = static_cast<T>(ms.n);
  if (mode == L1Mode::kMeanPerElement) denom *= static_cast<T>(ms.spatial());
  T s = 0;
  for (T v : m.data()) s += std::abs(v);
  Tensor<T> out({1, 1, 1, 1}, s / denom);
  return map.graph->record(std::move(out), {map},
                           [map, denom](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
                             Tensor<T>* dm = g.grad_slot(map);
                             const Tensor<T>& mv = g.value(map);
                             const T step = d[0] / denom;
                             for (std::size_t i = 0; i < mv.size(); ++i) {
                               const T sgn = mv[i] > T(0) ? T(1) : (mv[i] < T(0) ? T(-1) : T(0));
                               (*dm)[i] += sgn * step;
                             }
                           });
}

template <typename T>
Var<T> add_scaled(Var<T> a, Var<T> b, T alpha) {
  require_same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  if (alpha == T(1)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + alpha * bv[i];
  }
  return a.graph->record(std::move(out), {a, b},
                         [a, b, alpha](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
                           if (Tensor<T>* da = g.grad_slot(a)) {
                             for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i];
                           }
                           if (Tensor<T>* db = g.grad_slot(b)) {
                             for (std::size_t i = 0; i < d.size(); ++i) (*db)[i] += alpha * d[i];
                           }
                         });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return add_scaled(a, b, T(1));
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.graph->record(std::move(out), {a},
                         [a, factor](Graph<T>& g, const Tensor<T>&, const Tensor<T>& d) {
                           Tensor<T>* da = g.grad_slot(a);
                           for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i] * factor;
                         });
}

#define LOUPE_INSTANTIATE(T)                                                        \
  template T stable_sigmoid<T>(T) noexcept;                                         \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, ConvSpec);                      \
  template Var<T> pointwise<T>(Var<T>, Pointwise);                                  \
  template Var<T> broadcast_mul<T>(Var<T>, Var<T>);                                 \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                \
  template Var<T> patch_merge<T>(Var<T>, Var<T>, Var<T>);                           \
  template Var<T> global_avg_pool<T>(Var<T>);                                       \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);           \
  template Var<T> l1_reduce<T>(Var<T>, L1Mode);                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                           \
  template Var<T> scale<T>(Var<T>, T);                                              \
  template Var<T> add_scaled<T>(Var<T>, Var<T>, T);

LOUPE_INSTANTIATE(float)
LOUPE_INSTANTIATE(double)

#undef LOUPE_INSTANTIATE

}  // namespace loupe
