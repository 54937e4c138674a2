// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are directories holding
//   config.txt    the resolved run configuration
//   manifest.txt  "param <name> <n> <c> <h> <w> <byte offset>" per array
//   params.bin    every array as little-endian float32, manifest order
// They are written to a sibling temporary directory and renamed into place.

#pragma once

#include <filesystem>

#include "loupe/backbone.hpp"
#include "loupe/config.hpp"

namespace loupe {

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelState<T>& state, const RunConfig& cfg);

/// Reads the configuration stored alongside a checkpoint.
RunConfig read_checkpoint_config(const std::filesystem::path& dir);

/// Rebuilds the model described by the stored configuration and fills it from
/// the blob. Throws CompatibilityError when the manifest disagrees with the
/// configured shapes.
template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& dir);

/// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace loupe
