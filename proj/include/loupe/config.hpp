// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Files are UTF-8 `section.key = value` lines; `#` starts
// a comment, blank lines are ignored and unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "loupe/autodiff.hpp"
#include "loupe/backbone.hpp"
#include "loupe/objective.hpp"
#include "loupe/synthetic.hpp"

namespace loupe {

struct RunConfig {
  DatasetSpec data;
  AugmentConfig augment;
  EvalTransformConfig eval_transform{73, 64};
  /// Optional LFG1 file; when empty the dataset is generated from `data`.
  std::string data_path;

  BackboneConfig model;
  LossConfig loss;
  LionConfig optim{3e-4, 0.02, 0.9, 0.99};
  ScheduleConfig schedule;

  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  Precision precision = Precision::kSingle;
  bool record_wall_time = false;
  std::size_t eval_batch = 100;

  /// Copies shared fields into the owning sub-configs (model seed and class
  /// count, schedule base rate) and validates everything.
  void resolve();
  void validate() const;
};

/// Parses and resolves a configuration; errors name the offending key.
RunConfig parse_config(std::string_view text, const RunConfig& base = RunConfig{});
RunConfig load_config(const std::filesystem::path& path);
/// Applies one `key = value` setting; throws ConfigError for unknown keys.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Canonical key/value pairs in declaration order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string to_text(const RunConfig& cfg);

std::string to_string(Precision p);
std::string to_string(L1Mode m);

}  // namespace loupe
