#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tprobe/dataset.hpp"
#include "tprobe/rng.hpp"

namespace tprobe {

enum class SynthKind { content_only, position_only };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "content" || s == "content_only" || s == "content-only") return SynthKind::content_only;
  if (s == "position" || s == "position_only" || s == "position-only") return SynthKind::position_only;
  throw std::invalid_argument("unknown synthetic dataset kind '" + s + "' (content|position)");
}

inline std::string to_string(SynthKind k) { return k == SynthKind::content_only ? "content_only" : "position_only"; }

struct SynthOptions {
  std::size_t videos = 50;
  std::size_t frames = 64;  // per video
  std::size_t dim = 16;
  std::size_t annotators = 3;
  double annotator_noise = 0.01;
  double feature_noise = 0.1;  // position_only feature scale
  std::uint64_t seed = 0;
};

namespace detail {
// Contiguous shots of 4..12 frames at sample rate 1.
inline std::vector<ShotBoundary> random_shots(std::size_t n, Rng& rng) {
  std::vector<ShotBoundary> out;
  std::int64_t start = 0;
  while (start < static_cast<std::int64_t>(n)) {
    const auto len = static_cast<std::int64_t>(4 + uniform_index(rng, 9));
    const auto end = std::min<std::int64_t>(start + len - 1, static_cast<std::int64_t>(n) - 1);
    out.push_back({start, end});
    start = end + 1;
  }
  return out;
}
}  // namespace detail

/// Planted-structure datasets (summe_style, sample rate 1).
///
/// content_only: features ~ N(0,1); target = logistic(w·f / sqrt(D)) for
/// one fixed random w, so importance is a function of content alone and
/// frame order carries nothing.
///
/// position_only: features ~ N(0, feature_noise²) drawn independently of
/// everything; target = i/(N−1), a ramp over the frame index, so only
/// position carries signal.
///
/// Each annotator reports target + N(0, annotator_noise²), clamped to [0,1].
inline Dataset make_synthetic_dataset(SynthKind kind, const SynthOptions& opt = {}) {
  if (opt.videos == 0 || opt.frames < 2 || opt.dim == 0 || opt.annotators == 0)
    throw std::invalid_argument("synthetic dataset: videos, frames>=2, dim and annotators must be positive");
  Dataset ds;
  ds.name = "synth_" + to_string(kind);
  ds.style = DatasetStyle::summe_style;
  ds.dim = opt.dim;
  ds.sample_rate = 1;
  Rng wrng = make_rng(derive_seed(opt.seed, {0xC0FFEE}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(opt.dim);
  for (auto& x : w) x = gauss(wrng);

  for (std::size_t v = 0; v < opt.videos; ++v) {
    Rng rng = make_rng(derive_seed(opt.seed, {v + 1}));
    const std::size_t n = opt.frames;
    Tensor<float> features(n, opt.dim);
    std::vector<double> target(n);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < opt.dim; ++k) {
        const double f = gauss(rng) * (kind == SynthKind::content_only ? 1.0 : opt.feature_noise);
        features(i, k) = static_cast<float>(f);
        dot += w[k] * f;
      }
      target[i] = kind == SynthKind::content_only
                      ? 1.0 / (1.0 + std::exp(-dot / std::sqrt(static_cast<double>(opt.dim))))
                      : static_cast<double>(i) / static_cast<double>(n - 1);
    }
    Tensor<double> scores(opt.annotators, n);
    for (std::size_t a = 0; a < opt.annotators; ++a)
      for (std::size_t i = 0; i < n; ++i)
        scores(a, i) = std::clamp(target[i] + opt.annotator_noise * gauss(rng), 0.0, 1.0);
    char id[32];
    std::snprintf(id, sizeof id, "video_%03zu", v + 1);
    ds.videos.push_back(make_record(id, std::move(features), std::move(scores), detail::random_shots(n, rng),
                                    DatasetStyle::summe_style, 1));
  }
  return ds;
}

}  // namespace tprobe
