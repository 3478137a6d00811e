#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tprobe/models.hpp"
#include "tprobe/optim.hpp"
#include "tprobe/rng.hpp"
#include "tprobe/tensor.hpp"

namespace tprobe {

struct BlockError {
  std::string name;
  std::size_t checked = 0;
  double max_error = 0.0;
  std::size_t refined = 0;  // coordinates re-measured at a smaller step
};

struct GradCheckReport {
  std::vector<BlockError> blocks;
  double tolerance = 0.0;

  double max_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_error);
    return m;
  }
  bool passed() const { return max_error() < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-3;
  std::size_t samples_per_block = 32;
  std::uint64_t seed = 0;
  // A central difference that straddles a ReLU kink is meaningless; a
  // coordinate whose error at `step` reaches refine_fraction·tolerance is
  // re-measured at step/10, step/100, ...
  std::size_t refinements = 4;
  double refine_fraction = 0.01;
};

/// |a − n| / max(1, |a|, |n|)
inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares the gradients already stored in `params` against central
/// differences of `loss`. The closure must be deterministic and must not
/// touch the stored gradients. Blocks smaller than the sample count are
/// checked exhaustively.
template <typename T>
GradCheckReport finite_diff_check(const std::function<double()>& loss, const ParamRefs<T>& params,
                                  double tolerance, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tolerance = tolerance;
  Rng rng = make_rng(opt.seed);
  for (auto* p : params) {
    BlockError block{p->name, 0, 0.0, 0};
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.samples_per_block) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.samples_per_block);
    }
    for (auto i : coords) {
      const T original = p->value[i];
      auto central = [&](double h) {
        p->value[i] = static_cast<T>(original + h);
        const double up = loss();
        p->value[i] = static_cast<T>(original - h);
        const double down = loss();
        p->value[i] = original;
        return (up - down) / (2.0 * h);
      };
      double h = opt.step;
      double err = gradcheck_relative_error(p->grad[i], central(h));
      for (std::size_t r = 0; r < opt.refinements && err >= opt.refine_fraction * tolerance; ++r) {
        h /= 10.0;
        err = std::min(err, gradcheck_relative_error(p->grad[i], central(h)));
        if (r == 0) ++block.refined;
      }
      block.max_error = std::max(block.max_error, err);
      ++block.checked;
    }
    report.blocks.push_back(std::move(block));
  }
  return report;
}

struct ScorerCheckOptions {
  std::size_t frames = 8;
  double tolerance = 1e-4;
  double feature_scale = 1.0;
  double loss_scale = 1.0;      // multiplies the MSE
  double corrupt_factor = 1.0;  // applied to the analytic gradient, for plant-a-bug tests
  GradCheckOptions fd;
};

/// Gradient check of a whole scorer in double precision: random features
/// and targets, eval-mode forward, loss_scale·MSE.
inline GradCheckReport check_scorer_gradients(const ScorerConfig& config, std::uint64_t seed,
                                              const ScorerCheckOptions& opt = {}) {
  auto model = build_model<double>(config, derive_seed(seed, {0}));
  Rng rng = make_rng(derive_seed(seed, {1}));
  const std::size_t n = opt.frames, d = config.input_dim;
  Tensor<double> x(n, d), y(Shape{n});
  for (auto& v : x.values()) v = opt.feature_scale * (2.0 * uniform01(rng) - 1.0);
  for (auto& v : y.values()) v = uniform01(rng);
  auto params = model.parameters();
  zero_grads(params);
  typename ScorerModel<double>::Cache cache;
  const auto pred = model.forward(x, false, nullptr, cache);
  auto loss = mse_loss(pred, y);
  for (auto& g : loss.grad.values()) g *= opt.loss_scale;
  model.backward(cache, loss.grad);
  if (opt.corrupt_factor != 1.0)
    for (auto* p : params)
      for (auto& g : p->grad.values()) g *= opt.corrupt_factor;
  auto closure = [&] { return opt.loss_scale * mse_loss(score_frames(model, x), y).loss; };
  GradCheckOptions fd = opt.fd;
  fd.seed = derive_seed(seed, {2});
  return finite_diff_check<double>(closure, params, opt.tolerance, fd);
}

}  // namespace tprobe
