// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "loupe/autodiff.hpp"

namespace loupe {

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t min_coordinates = 200;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  /// Names of the parameter arrays that contributed at least one coordinate.
  std::vector<std::string> checked_params;
  /// Coordinates passed over because the perturbation changed the kink
  /// signature; central differences are meaningless there.
  std::size_t kinks_skipped = 0;
};

/// An objective value plus the relu kink signature of its evaluation
/// (Graph::kink_signature), or 0 for smooth objectives.
struct GradCheckEval {
  double value = 0.0;
  std::uint64_t signature = 0;
};

/// Compares the analytic gradients already stored in each parameter's grad
/// against central differences of `objective`, which must be a deterministic
/// function of the current parameter values. Every array contributes
/// coordinates; the total is at least min_coordinates (or everything, if
/// fewer exist). Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const std::function<double()>& objective,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

/// As above, but a coordinate whose +eps or -eps evaluation has a different
/// signature from the unperturbed one is skipped and another coordinate of
/// the same array is drawn in its place.
GradCheckReport grad_check(const std::function<GradCheckEval()>& objective,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

}  // namespace loupe
