// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Drivers behind the command-line tool: gradient check, evaluation of a
// saved checkpoint, lambda sweeps and attention overlays.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "loupe/gradcheck.hpp"
#include "loupe/trainer.hpp"

namespace loupe {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckOutcome {
  GradCheckReport report;
  bool loupe_checked = false;
  bool passed = false;
};

/// Double-precision check of the composite loss on a small batch of training
/// images. The Loupe output layer is randomized first so that gradients reach
/// its hidden convolution.
GradCheckOutcome run_gradcheck(const RunConfig& cfg, const Dataset& data, std::size_t batch = 4,
                               const GradCheckOptions& options = {});

enum class Split { kVal, kTest };

/// Evaluates the checkpoint in `dir` on one split. With shuffle_seed set the
/// labels are permuted first, which should bring accuracy to chance.
EvalSummary evaluate_checkpoint(const std::filesystem::path& dir, const Dataset& data, Split split,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

std::string summary_json(const EvalSummary& s);

/// Trains every config, `jobs` at a time. Results come back in input order.
std::vector<TrainResult> train_many(const std::vector<RunConfig>& configs, const Dataset& data, std::size_t jobs,
                                    bool write_artifacts, std::ostream* log);

struct SweepOptions {
  std::vector<double> lambdas{0.0, 0.01, 0.05, 0.1, 0.5, 5.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t jobs = 1;
  bool write_artifacts = true;
  std::ostream* log = nullptr;
};

struct SweepRow {
  double lambda = 0.0;
  std::vector<double> accuracy;
  std::vector<double> mass;             // final weights
  std::vector<double> checkpoint_mass;  // best-validation weights
  std::vector<double> hit_rate;
  std::vector<double> iou;
};

double mean(const std::vector<double>& v);
/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& v);

/// Runs <out_dir>/lambda_<value>/seed_<seed> for every pair; rows follow the
/// order of options.lambdas.
std::vector<SweepRow> run_sweep(const RunConfig& base, const Dataset& data, const SweepOptions& options);
std::string sweep_table(const std::vector<SweepRow>& rows);

struct VizSummary {
  std::size_t written = 0;
  EvalSummary metrics;
};

/// Writes sample_0000.ppm ... for the first `count` test images plus
/// viz_metrics.jsonl into out_dir.
VizSummary run_viz(const std::filesystem::path& checkpoint, const Dataset& data, std::size_t count,
                   const std::filesystem::path& out_dir);

}  // namespace loupe
