// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "utts/error.hpp"
#include "utts/rng.hpp"

namespace utts::nn {

GradCheckResult finite_diff_check(const std::string& op, const std::function<double()>& loss,
                                  const std::function<void()>& analytic, const std::vector<GradTarget>& targets,
                                  const GradCheckOptions& options) {
  auto evaluate = [&]() {
    const double v = loss();
    if (!std::isfinite(v)) throw NumericError("gradient check '" + op + "': loss is not finite");
    return v;
  };

  analytic();
  std::vector<Matrix> grads;
  grads.reserve(targets.size());
  for (const auto& t : targets) {
    if (t.grad->size() != t.value->size())
      throw ShapeError("gradient check '" + op + "': gradient for '" + t.name + "' has the wrong size");
    if (!t.grad->allFinite()) throw NumericError("gradient check '" + op + "': analytic gradient of '" + t.name + "' is not finite");
    grads.push_back(*t.grad);
  }

  Rng rng(options.sample_seed);
  GradCheckResult result;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Matrix& value = *targets[ti].value;
    std::vector<Index> entries(static_cast<std::size_t>(value.size()));
    std::iota(entries.begin(), entries.end(), Index{0});
    if (options.max_entries > 0 && static_cast<Index>(entries.size()) > options.max_entries) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_entries); ++i)
        std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      entries.resize(static_cast<std::size_t>(options.max_entries));
    }
    for (Index e : entries) {
      double& x = value.data()[e];
      const double saved = x;
      x = saved + options.step;
      const double up = evaluate();
      x = saved - options.step;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double rel = std::abs(grads[ti].data()[e] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_target = targets[ti].name;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

}  // namespace utts::nn
