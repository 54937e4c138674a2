// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

namespace loupe {

namespace {

constexpr std::uint64_t kLoupeStream = 0x9E3779B97F4A7C15ULL;

template <typename T>
Parameter<T> gaussian(std::string name, Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> normal(0.0, stddev);
  for (T& v : t.data()) v = static_cast<T>(normal(rng));
  return Parameter<T>(std::move(name), std::move(t));
}

template <typename T>
Parameter<T> zeros(std::string name, Shape shape) {
  return Parameter<T>(std::move(name), Tensor<T>(shape));
}

template <typename To, typename From>
Parameter<To> convert_param(const Parameter<From>& p) {
  return Parameter<To>(p.name, p.value.template cast<To>());
}

}  // namespace

void BackboneConfig::validate() const {
  if (in_channels == 0) throw ConfigError("model.in_channels: must be positive");
  if (patch_size == 0) throw ConfigError("model.patch_size: must be positive");
  if (base_channels == 0) throw ConfigError("model.base_channels: must be positive");
  if (num_classes < 2) throw ConfigError("model.num_classes: need at least 2 classes");
  if (input_size == 0 || input_size % (patch_size * 8) != 0) {
    throw ConfigError("model.input_size: " + std::to_string(input_size) +
                      " is not divisible by patch_size * 8 = " + std::to_string(patch_size * 8));
  }
  if (insertion_stage != 2) {
    throw ConfigError("model.insertion_stage: only stage 2 is supported, got " +
                      std::to_string(insertion_stage));
  }
}

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper_scale() {
  BackboneConfig c;
  c.input_size = 224;
  c.base_channels = 128;
  c.blocks_per_stage = {2, 2, 18, 2};
  c.num_classes = 200;
  return c;
}

template <typename T>
std::vector<Parameter<T>*> ModelState<T>::parameters() {
  std::vector<Parameter<T>*> out{&embed_w, &embed_b};
  for (std::size_t s = 0; s < 4; ++s) {
    for (auto& block : stages[s]) {
      out.insert(out.end(), {&block.conv1_w, &block.conv1_b, &block.conv2_w, &block.conv2_b});
    }
    if (s < 3) out.insert(out.end(), {&merges[s].w, &merges[s].b});
  }
  if (config.loupe_enabled) out.insert(out.end(), {&loupe.w1, &loupe.b1, &loupe.w2, &loupe.b2});
  out.insert(out.end(), {&head_w, &head_b});
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ModelState<T>::parameters() const {
  auto mut = const_cast<ModelState<T>*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
void ModelState<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
ModelState<T> build(const BackboneConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ModelState<T> st;
  st.config = config;

  const std::size_t c1 = config.base_channels;
  const std::size_t p = config.patch_size;
  const double embed_fan_in = static_cast<double>(config.in_channels * p * p);
  st.embed_w = gaussian<T>("embed.weight", {c1, config.in_channels, p, p}, std::sqrt(2.0 / embed_fan_in), rng);
  st.embed_b = zeros<T>("embed.bias", {c1, 1, 1, 1});

  for (std::size_t s = 1; s <= 4; ++s) {
    const std::size_t c = config.stage_channels(s);
    const double conv_std = std::sqrt(2.0 / (9.0 * static_cast<double>(c)));
    for (std::size_t b = 0; b < config.blocks_per_stage[s - 1]; ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      ResidualBlockParams<T> block;
      block.conv1_w = gaussian<T>(prefix + "conv1.weight", {c, c, 3, 3}, conv_std, rng);
      block.conv1_b = zeros<T>(prefix + "conv1.bias", {c, 1, 1, 1});
      block.conv2_w = gaussian<T>(prefix + "conv2.weight", {c, c, 3, 3}, conv_std, rng);
      block.conv2_b = zeros<T>(prefix + "conv2.bias", {c, 1, 1, 1});
      st.stages[s - 1].push_back(std::move(block));
    }
    if (s < 4) {
      const std::string prefix = "merge" + std::to_string(s) + ".";
      st.merges[s - 1].w = gaussian<T>(prefix + "weight", {2 * c, 4 * c, 1, 1},
                                       std::sqrt(1.0 / (4.0 * static_cast<double>(c))), rng);
      st.merges[s - 1].b = zeros<T>(prefix + "bias", {2 * c, 1, 1, 1});
    }
  }

  const std::size_t d = config.stage_channels(4);
  st.head_w = gaussian<T>("head.weight", {config.num_classes, d, 1, 1},
                          std::sqrt(1.0 / static_cast<double>(d)), rng);
  st.head_b = zeros<T>("head.bias", {config.num_classes, 1, 1, 1});

  std::mt19937_64 loupe_rng(config.seed ^ kLoupeStream);
  st.loupe = make_loupe_params<T>(config.stage_channels(config.insertion_stage), loupe_rng);
  return st;
}

template <typename To, typename From>
ModelState<To> convert(const ModelState<From>& src) {
  ModelState<To> dst;
  dst.config = src.config;
  dst.step = src.step;
  dst.embed_w = convert_param<To>(src.embed_w);
  dst.embed_b = convert_param<To>(src.embed_b);
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& b : src.stages[s]) {
      dst.stages[s].push_back({convert_param<To>(b.conv1_w), convert_param<To>(b.conv1_b),
                               convert_param<To>(b.conv2_w), convert_param<To>(b.conv2_b)});
    }
  }
  for (std::size_t s = 0; s < 3; ++s) {
    dst.merges[s] = {convert_param<To>(src.merges[s].w), convert_param<To>(src.merges[s].b)};
  }
  dst.loupe.channels = src.loupe.channels;
  dst.loupe.w1 = convert_param<To>(src.loupe.w1);
  dst.loupe.b1 = convert_param<To>(src.loupe.b1);
  dst.loupe.w2 = convert_param<To>(src.loupe.w2);
  dst.loupe.b2 = convert_param<To>(src.loupe.b2);
  dst.head_w = convert_param<To>(src.head_w);
  dst.head_b = convert_param<To>(src.head_b);
  return dst;
}

template <typename T>
ParamCount count_params(const ModelState<T>& state) {
  ParamCount pc;
  pc.backbone = state.embed_w.size() + state.embed_b.size() + state.head_w.size() + state.head_b.size();
  for (const auto& stage : state.stages) {
    for (const auto& b : stage) {
      pc.backbone += b.conv1_w.size() + b.conv1_b.size() + b.conv2_w.size() + b.conv2_b.size();
    }
  }
  for (const auto& m : state.merges) pc.backbone += m.w.size() + m.b.size();
  pc.loupe = state.config.loupe_enabled ? state.loupe.size() : 0;
  pc.ratio = static_cast<double>(pc.loupe) / static_cast<double>(pc.backbone + pc.loupe);
  return pc;
}

template <typename T>
Var<T> embed(ModelState<T>& state, Var<T> images) {
  const BackboneConfig& c = state.config;
  const Shape s = images.shape();
  if (s.c != c.in_channels || s.h != c.input_size || s.w != c.input_size) {
    throw DimensionError("forward: expected images (N, " + std::to_string(c.in_channels) + ", " +
                         std::to_string(c.input_size) + ", " + std::to_string(c.input_size) +
                         "), got " + s.str());
  }
  Graph<T>& g = *images.graph;
  return conv2d(images, g.param(state.embed_w), g.param(state.embed_b), {0, c.patch_size});
}

template <typename T>
Var<T> run_stage(ModelState<T>& state, std::size_t s, Var<T> x) {
  Graph<T>& g = *x.graph;
  for (auto& b : state.stages[s - 1]) {
    Var<T> h = conv2d(relu(x), g.param(b.conv1_w), g.param(b.conv1_b), {1, 1});
    h = conv2d(relu(h), g.param(b.conv2_w), g.param(b.conv2_b), {1, 1});
    x = add(x, h);
  }
  return x;
}

template <typename T>
Var<T> merge_after(ModelState<T>& state, std::size_t s, Var<T> x) {
  Graph<T>& g = *x.graph;
  return patch_merge(x, g.param(state.merges[s - 1].w), g.param(state.merges[s - 1].b));
}

template <typename T>
Var<T> classify(ModelState<T>& state, Var<T> x) {
  Graph<T>& g = *x.graph;
  return linear(global_avg_pool(relu(x)), g.param(state.head_w), g.param(state.head_b));
}

template <typename T>
ForwardResult<T> forward(ModelState<T>& state, Var<T> images) {
  ForwardResult<T> r;
  r.embedded = embed(state, images);
  Var<T> x = run_stage(state, 1, r.embedded);
  x = merge_after(state, 1, x);
  x = run_stage(state, 2, x);
  r.stage2 = x;
  if (state.config.loupe_enabled) {
    Var<T> map = attention_forward(x, state.loupe);
    x = refine(x, map);
    r.map = map;
  }
  x = merge_after(state, 2, x);
  x = run_stage(state, 3, x);
  x = merge_after(state, 3, x);
  x = run_stage(state, 4, x);
  r.logits = classify(state, x);
  return r;
}

#define LOUPE_INSTANTIATE(T)                                            \
  template struct ModelState<T>;                                        \
  template ModelState<T> build<T>(const BackboneConfig&);               \
  template ParamCount count_params<T>(const ModelState<T>&);            \
  template Var<T> embed<T>(ModelState<T>&, Var<T>);                     \
  template Var<T> run_stage<T>(ModelState<T>&, std::size_t, Var<T>);    \
  template Var<T> merge_after<T>(ModelState<T>&, std::size_t, Var<T>); \
  template Var<T> classify<T>(ModelState<T>&, Var<T>);                  \
  template ForwardResult<T> forward<T>(ModelState<T>&, Var<T>);

LOUPE_INSTANTIATE(float)
LOUPE_INSTANTIATE(double)
#undef LOUPE_INSTANTIATE

template ModelState<double> convert<double, float>(const ModelState<float>&);
template ModelState<float> convert<float, double>(const ModelState<double>&);
template ModelState<float> convert<float, float>(const ModelState<float>&);
template ModelState<double> convert<double, double>(const ModelState<double>&);

}  // namespace loupe
