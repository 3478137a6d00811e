#pragma once

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tprobe/dataset.hpp"
#include "tprobe/eval.hpp"
#include "tprobe/tensor.hpp"

namespace tprobe {

struct HeatmapPair {
  std::string video_id;
  Tensor<double> cosine;   // N×N in [−1,1]
  Tensor<double> gt_diff;  // N×N in [0,1]
  std::vector<std::size_t> zero_rows;  // frames whose feature vector is all zero
};

/// M[i,j] = <f_i,f_j>/(|f_i||f_j|), clamped to [−1,1]. Rows of a zero
/// vector are 0 everywhere, diagonal included, and listed in `zero_rows`.
inline Tensor<double> cosine_similarity_matrix(const Tensor<float>& features,
                                               std::vector<std::size_t>* zero_rows = nullptr) {
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(features(i, k)) * features(i, k);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0 && zero_rows) zero_rows->push_back(i);
  }
  Tensor<double> m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) continue;
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norms[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(features(i, k)) * features(j, k);
      const double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      m(i, j) = c;
      m(j, i) = c;
    }
  }
  return m;
}

inline Tensor<double> gt_difference_matrix(std::span<const double> ground_truth) {
  const std::size_t n = ground_truth.size();
  Tensor<double> m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = std::abs(ground_truth[i] - ground_truth[j]);
  return m;
}

inline HeatmapPair make_heatmaps(const VideoRecord& record) {
  HeatmapPair pair;
  pair.video_id = record.id;
  pair.cosine = cosine_similarity_matrix(record.features, &pair.zero_rows);
  pair.gt_diff = gt_difference_matrix(record.ground_truth);
  return pair;
}

/// Pearson correlation between the strict upper triangles of the cosine
/// matrix and the negated ground-truth difference matrix. High values mean
/// visually similar frames carry similar importance.
inline Correlation similarity_agreement(const HeatmapPair& pair) {
  std::vector<double> a, b;
  const std::size_t n = pair.cosine.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      a.push_back(pair.cosine(i, j));
      b.push_back(-pair.gt_diff(i, j));
    }
  if (a.size() < 2) return {0.0, true};
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    cov += (a[k] - ma) * (b[k] - mb);
    va += (a[k] - ma) * (a[k] - ma);
    vb += (b[k] - mb) * (b[k] - mb);
  }
  if (va == 0.0 || vb == 0.0) return {0.0, true};
  return {std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0), false};
}

inline void write_matrix_csv(const std::filesystem::path& path, const Tensor<double>& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Tensor<double> read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(std::stod(cell));
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols) throw std::runtime_error("ragged CSV row in " + path.string());
    ++rows;
  }
  return Tensor<double>({rows, cols}, std::move(values));
}

using Rgb = std::array<unsigned char, 3>;

/// Piecewise-linear ramp through five viridis anchors, t in [0,1].
inline Rgb color_ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  Rgb out{};
  for (std::size_t c = 0; c < 3; ++c)
    out[c] = static_cast<unsigned char>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  return out;
}

/// Writes an 8-bit RGB PNG. `pixels` holds width·height colors row-major.
inline void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<Rgb>& pixels) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("failed encoding " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r)
    png_write_row(png, reinterpret_cast<png_const_bytep>(pixels.data() + r * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Renders an N×N matrix with `cell` pixels per entry, mapping each value
/// through `to_unit` onto the color ramp.
template <typename F>
void render_matrix_png(const std::filesystem::path& path, const Tensor<double>& m, std::size_t cell, F to_unit) {
  const std::size_t n = m.rows(), w = n * cell;
  std::vector<Rgb> pixels(w * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Rgb c = color_ramp(to_unit(m(i, j)));
      for (std::size_t y = 0; y < cell; ++y)
        for (std::size_t x = 0; x < cell; ++x) pixels[(i * cell + y) * w + j * cell + x] = c;
    }
  write_png(path, w, w, pixels);
}

struct HeatmapFiles {
  std::filesystem::path cosine_csv, gt_diff_csv, cosine_png, gt_diff_png;
};

/// Writes <id>.cosine.csv, <id>.gtdiff.csv, <id>.cosine.png and
/// <id>.gtdiff.png. Cosine uses the ramp directly (negatives clamp to the
/// low end); the ground-truth difference uses the inverse ramp so that
/// similar frames and similar importance share a color.
inline HeatmapFiles export_heatmap(const HeatmapPair& pair, const std::filesystem::path& dir,
                                   std::size_t pixels_per_frame = 4) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  HeatmapFiles files{dir / (pair.video_id + ".cosine.csv"), dir / (pair.video_id + ".gtdiff.csv"),
                     dir / (pair.video_id + ".cosine.png"), dir / (pair.video_id + ".gtdiff.png")};
  write_matrix_csv(files.cosine_csv, pair.cosine);
  write_matrix_csv(files.gt_diff_csv, pair.gt_diff);
  render_matrix_png(files.cosine_png, pair.cosine, pixels_per_frame, [](double v) { return v; });
  render_matrix_png(files.gt_diff_png, pair.gt_diff, pixels_per_frame, [](double v) { return 1.0 - v; });
  return files;
}

}  // namespace tprobe
