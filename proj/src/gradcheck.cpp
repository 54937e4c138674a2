// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

namespace loupe {

GradCheckReport grad_check(const std::function<double()>& objective,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
  return grad_check([&] { return GradCheckEval{objective(), 0}; }, params, options);
}

GradCheckReport grad_check(const std::function<GradCheckEval()>& objective,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-6 && options.eps <= 1e-2)) {
    throw ArgumentError("grad_check: eps must lie in [1e-6, 1e-2]");
  }
  const GradCheckEval probe_a = objective();
  const GradCheckEval probe_b = objective();
  if (std::bit_cast<std::uint64_t>(probe_a.value) != std::bit_cast<std::uint64_t>(probe_b.value) ||
      probe_a.signature != probe_b.signature) {
    throw ContractError("grad_check: objective is not deterministic");
  }

  std::size_t total = 0;
  for (const Parameter<double>* p : params) total += p->size();

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (Parameter<double>* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw ContractError("grad_check: missing analytic gradient for " + p->name);
    }
    const std::size_t n = p->size();
    if (n == 0) continue;
    const double share = std::ceil(static_cast<double>(options.min_coordinates) *
                                   static_cast<double>(n) / static_cast<double>(total));
    const std::size_t want = std::min(n, std::max<std::size_t>(4, static_cast<std::size_t>(share)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t done = 0;
    for (std::size_t k = 0; k < n && done < want; ++k) {
      const std::size_t idx = order[k];
      double& theta = p->value[idx];
      const double saved = theta;
      theta = saved + options.eps;
      const GradCheckEval plus = objective();
      theta = saved - options.eps;
      const GradCheckEval minus = objective();
      theta = saved;
      if (plus.signature != probe_a.signature || minus.signature != probe_a.signature) {
        ++report.kinks_skipped;
        continue;
      }

      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double analytic = p->grad[idx];
      const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      const double rel = std::abs(analytic - numeric) / denom;
      if (report.coordinates == 0 || rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_index = idx;
      }
      ++report.coordinates;
      ++done;
    }
    if (done > 0) report.checked_params.push_back(p->name);
  }
  return report;
}

}  // namespace loupe
