// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>

#include <png.h>

#include "utts/error.hpp"

namespace utts::plot {
namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                       {214, 39, 40},
                                       {44, 160, 44},
                                       {255, 127, 14},
                                       {148, 103, 189},
                                       {140, 86, 75},
                                       {227, 119, 194},
                                       {23, 190, 207}}};
constexpr int kMargin = 30;

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> px;

  Canvas(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width * height * 3), 255) {}

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    const auto i = static_cast<std::size_t>((y * w + x) * 3);
    px[i] = c[0];
    px[i + 1] = c[1];
    px[i + 2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, const Rgb& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void dot(int x, int y, const Rgb& c) {
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j)
        if (i * i + j * j <= 5) set(x + i, y + j, c);
  }

  void frame() {
    const Rgb k{0, 0, 0};
    line(kMargin, kMargin, kMargin, h - kMargin, k);
    line(kMargin, h - kMargin, w - kMargin, h - kMargin, k);
  }

  void save(const std::filesystem::path& path) const {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(f);
      throw IoError("PNG encoding failed for '" + path.string() + "'");
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
      png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y * w * 3)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
  }
};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

struct Axes {
  Range xr, yr;
  int w, h;

  explicit Axes(const std::vector<Series>& series, int width, int height) : w(width), h(height) {
    for (const auto& s : series) {
      for (double v : s.x) xr.add(v);
      for (double v : s.y) yr.add(v);
    }
    xr.pad();
    yr.pad();
  }
  int px(double x) const {
    return kMargin + static_cast<int>(std::lround((x - xr.lo) / (xr.hi - xr.lo) * (w - 2 * kMargin)));
  }
  int py(double y) const {
    return h - kMargin - static_cast<int>(std::lround((y - yr.lo) / (yr.hi - yr.lo) * (h - 2 * kMargin)));
  }
};

const Rgb& colour(int i) { return kPalette[static_cast<std::size_t>(std::abs(i)) % kPalette.size()]; }

}  // namespace

void line_plot(const std::vector<Series>& series, const std::filesystem::path& path, int width, int height) {
  Canvas c(width, height);
  const Axes ax(series, width, height);
  c.frame();
  for (const auto& s : series)
    for (std::size_t i = 1; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i - 1]) || !std::isfinite(s.y[i])) continue;
      c.line(ax.px(s.x[i - 1]), ax.py(s.y[i - 1]), ax.px(s.x[i]), ax.py(s.y[i]), colour(s.color));
    }
  c.save(path);
}

void scatter_plot(const std::vector<Series>& series, const std::filesystem::path& path, int width, int height) {
  Canvas c(width, height);
  const Axes ax(series, width, height);
  c.frame();
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) c.dot(ax.px(s.x[i]), ax.py(s.y[i]), colour(s.color));
  c.save(path);
}

void heatmap(const Eigen::MatrixXd& values, const std::filesystem::path& path, int scale) {
  const int rows = static_cast<int>(values.rows()), cols = static_cast<int>(values.cols());
  if (rows == 0 || cols == 0) throw InputError("heatmap: empty matrix");
  Canvas c(cols * scale, rows * scale);
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double span = hi - lo > 0.0 ? hi - lo : 1.0;
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < cols; ++k) {
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (values(r, k) - lo) / span));
      const Rgb px{g, g, g};
      for (int i = 0; i < scale; ++i)
        for (int j = 0; j < scale; ++j) c.set(k * scale + j, (rows - 1 - r) * scale + i, px);
    }
  c.save(path);
}

}  // namespace utts::plot
