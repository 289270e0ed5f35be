// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Finite-difference sweep over every differentiable operation and both
// composite training losses, on a tiny model.

#include <cstdint>
#include <string>
#include <vector>

#include "utts/gradcheck.hpp"
#include "utts/model.hpp"

namespace utts {

struct GradSuiteOptions {
  std::uint64_t seed = 1;
  int max_entries = 24;  // per target; <= 0 checks every entry
  double step = 1e-5;
};

struct GradSuiteEntry {
  std::string op;
  nn::GradCheckResult result;
};

// hidden 16, two U-net levels, two content blocks.
ModelConfig tiny_model_config();

std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& options = {});

}  // namespace utts
