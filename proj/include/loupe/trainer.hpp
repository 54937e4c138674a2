// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "loupe/backbone.hpp"
#include "loupe/config.hpp"
#include "loupe/synthetic.hpp"
#include "loupe/viz.hpp"

namespace loupe {

/// Fraction of upsampled map pixels kept for the IoU and overlay masks.
inline constexpr double kTopFraction = 0.05;

struct EvalSummary {
  std::size_t count = 0;
  double accuracy = 0.0;
  // Absent for models without the attention module.
  std::optional<double> mean_attention_mass;
  std::optional<double> pointing_hit_rate;
  std::optional<double> iou_mean;
  std::optional<double> border_mass;
};

/// Per-sample outputs of evaluate(), filled on request.
struct SampleOutcome {
  int predicted = 0;
  std::vector<float> upsampled_map;  // model input size squared; empty without a map
  BinaryMask top_mask;
  bool hit = false;
  double iou = 0.0;
};

/// Maps [0, 1] pixel values to the network's input range.
template <typename T>
Tensor<T> make_batch(std::span<const SyntheticSample* const> samples);

/// Runs the model over already eval-transformed samples.
template <typename T>
EvalSummary evaluate(ModelState<T>& state, std::span<const SyntheticSample> samples, std::size_t batch_size,
                     std::vector<SampleOutcome>* outcomes = nullptr);

std::vector<SyntheticSample> prepare_eval(std::span<const SyntheticSample> samples, const EvalTransformConfig& cfg);

/// Train-time view: random crop and flip, then resize back to the model input.
SyntheticSample train_transform(const SyntheticSample& sample, std::mt19937_64& rng, const RunConfig& cfg);

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double train_sparsity = 0.0;
  double val_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> mean_attention_mass;
  std::optional<double> pointing_hit_rate;
  std::optional<double> iou_mean;
  double lr = 0.0;
  std::optional<double> wall_seconds;
};

/// One JSON object with exactly the MetricsRecord keys; absent values are null.
std::string to_json_line(const MetricsRecord& r);
/// Header line of a metrics file: {"config": {...}}.
std::string config_json_line(const RunConfig& cfg);

struct TrainOptions {
  bool write_artifacts = true;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  EvalSummary test;        // best-validation weights
  EvalSummary final_test;  // weights at the last epoch
};

/// Full training run; writes <out_dir>/metrics.jsonl and <out_dir>/best/
/// when write_artifacts is set.
TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& options = {});

/// Loads cfg.data_path when set (checking it against cfg.data), otherwise
/// generates the dataset.
Dataset load_or_generate(const RunConfig& cfg);

}  // namespace loupe
