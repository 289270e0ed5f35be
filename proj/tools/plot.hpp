// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Minimal raster plots (no text) written as PNG.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace utts::plot {

struct Series {
  std::vector<double> x, y;
  int color = 0;  // palette index
};

// Polylines on shared axes.
void line_plot(const std::vector<Series>& series, const std::filesystem::path& path, int width = 640,
               int height = 400);

// Dots; each series gets its palette colour.
void scatter_plot(const std::vector<Series>& series, const std::filesystem::path& path, int width = 640,
                  int height = 480);

// Rows become image rows (top = last row), values mapped to a grey ramp.
void heatmap(const Eigen::MatrixXd& values, const std::filesystem::path& path, int scale = 4);

}  // namespace utts::plot
