// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "utts/nn.hpp"

namespace utts::nn {

// One differentiable quantity: its storage and where the analytic pass
// leaves its gradient.
struct GradTarget {
  std::string name;
  Matrix* value = nullptr;
  const Matrix* grad = nullptr;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Entries checked per target; <= 0 checks all of them.
  int max_entries = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_target;
  Index worst_entry = -1;
  long checked = 0;
};

// Central differences against the analytic gradient. `analytic` must write
// fresh gradients for every target; `loss` is re-evaluated per perturbation.
// Relative error is |analytic - numeric| / max(1, |numeric|).
// Throws NumericError naming `op` when a loss evaluation is not finite.
GradCheckResult finite_diff_check(const std::string& op, const std::function<double()>& loss,
                                  const std::function<void()>& analytic, const std::vector<GradTarget>& targets,
                                  const GradCheckOptions& options = {});

}  // namespace utts::nn
