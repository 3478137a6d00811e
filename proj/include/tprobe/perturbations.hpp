#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tprobe/dataset.hpp"
#include "tprobe/rng.hpp"

namespace tprobe {

enum class ShuffleStrategy { identity, flip, fixed_segment, intra_shot, neighbour_shot, any_shot };

NLOHMANN_JSON_SERIALIZE_ENUM(ShuffleStrategy, {{ShuffleStrategy::identity, "identity"},
                                               {ShuffleStrategy::flip, "flip"},
                                               {ShuffleStrategy::fixed_segment, "fixed_segment"},
                                               {ShuffleStrategy::intra_shot, "intra_shot"},
                                               {ShuffleStrategy::neighbour_shot, "neighbour_shot"},
                                               {ShuffleStrategy::any_shot, "any_shot"}})

inline std::string to_string(ShuffleStrategy s) { return nlohmann::json(s).get<std::string>(); }

inline bool is_shot_level(ShuffleStrategy s) {
  return s == ShuffleStrategy::intra_shot || s == ShuffleStrategy::neighbour_shot || s == ShuffleStrategy::any_shot;
}

class PerturbationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ShuffleSpec {
  ShuffleStrategy strategy = ShuffleStrategy::flip;
  std::size_t segments = 4;  // M, fixed_segment only
  std::size_t window = 3;    // w, neighbour_shot only
  std::uint64_t seed = 0;
  bool fixed_per_video = false;  // reuse one permutation per video instead of one per epoch

  friend bool operator==(const ShuffleSpec&, const ShuffleSpec&) = default;

  void validate() const {
    if (strategy == ShuffleStrategy::fixed_segment && segments < 2)
      throw PerturbationError("fixed_segment needs at least 2 segments");
    if (strategy == ShuffleStrategy::neighbour_shot && window < 2)
      throw PerturbationError("neighbour_shot needs a window of at least 2 shots");
  }
};

inline void to_json(nlohmann::json& j, const ShuffleSpec& s) {
  j = {{"strategy", s.strategy},
       {"segments", s.segments},
       {"window", s.window},
       {"seed", s.seed},
       {"fixed_per_video", s.fixed_per_video}};
}

inline void from_json(const nlohmann::json& j, ShuffleSpec& s) {
  const ShuffleSpec d;
  const auto name = j.at("strategy").get<std::string>();
  s.strategy = j.at("strategy").get<ShuffleStrategy>();
  if (to_string(s.strategy) != name) throw PerturbationError("unknown shuffle strategy '" + name + "'");
  s.segments = j.value("segments", d.segments);
  s.window = j.value("window", d.window);
  s.seed = j.value("seed", d.seed);
  s.fixed_per_video = j.value("fixed_per_video", d.fixed_per_video);
  s.validate();
}

/// With probability p, a flip or a fixed-segment shuffle (even odds).
struct AugmentationSpec {
  double p = 0.5;
  std::size_t segments = 4;
  std::uint64_t seed = 0;
  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

inline void to_json(nlohmann::json& j, const AugmentationSpec& a) {
  j = {{"p", a.p}, {"segments", a.segments}, {"seed", a.seed}};
}

inline void from_json(const nlohmann::json& j, AugmentationSpec& a) {
  const AugmentationSpec d;
  a.p = j.value("p", d.p);
  a.segments = j.value("segments", d.segments);
  a.seed = j.value("seed", d.seed);
  if (!(a.p >= 0.0 && a.p <= 1.0)) throw PerturbationError("augmentation p must lie in [0,1]");
  if (a.segments < 2) throw PerturbationError("augmentation needs at least 2 segments");
}

/// New position i takes old frame mapping[i].
struct Permutation {
  std::vector<std::size_t> mapping;
  ShuffleStrategy strategy = ShuffleStrategy::identity;
  std::size_t segments = 0;
  std::size_t window = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return mapping.size(); }

  bool is_identity() const {
    for (std::size_t i = 0; i < mapping.size(); ++i)
      if (mapping[i] != i) return false;
    return true;
  }

  static Permutation identity(std::size_t n) {
    Permutation p;
    p.mapping.resize(n);
    std::iota(p.mapping.begin(), p.mapping.end(), std::size_t{0});
    return p;
  }
};

inline bool is_bijection(std::span<const std::size_t> mapping) {
  std::vector<bool> seen(mapping.size(), false);
  for (auto m : mapping) {
    if (m >= mapping.size() || seen[m]) return false;
    seen[m] = true;
  }
  return true;
}

/// (a∘b)[i] = a[b[i]]: applying b, then a.
inline Permutation compose(const Permutation& a, const Permutation& b) {
  if (a.size() != b.size()) throw PerturbationError("compose: length mismatch");
  Permutation out = Permutation::identity(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.mapping[i] = b.mapping[a.mapping[i]];
  return out;
}

/// [begin, end) frame ranges of the runs of equal shot id.
inline std::vector<std::pair<std::size_t, std::size_t>> shot_ranges(std::span<const int> shot_ids) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= shot_ids.size(); ++i) {
    if (i == shot_ids.size() || shot_ids[i] != shot_ids[i - 1]) {
      out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

namespace detail {
inline void append_range(std::vector<std::size_t>& out, std::pair<std::size_t, std::size_t> r) {
  for (std::size_t i = r.first; i < r.second; ++i) out.push_back(i);
}
}  // namespace detail

inline Permutation generate_permutation(const ShuffleSpec& spec, std::size_t n, std::span<const int> shot_ids = {}) {
  spec.validate();
  if (n == 0) throw PerturbationError("cannot permute an empty sequence");
  Permutation perm;
  perm.strategy = spec.strategy;
  perm.seed = spec.seed;
  Rng rng = make_rng(spec.seed);
  auto& m = perm.mapping;
  m.reserve(n);

  if (is_shot_level(spec.strategy)) {
    if (shot_ids.empty()) throw PerturbationError(to_string(spec.strategy) + " needs shot ids");
    if (shot_ids.size() != n) throw PerturbationError("shot ids length does not match sequence length");
    if (!valid_shot_ids({shot_ids.begin(), shot_ids.end()}))
      throw PerturbationError("shot ids must start at 0 and increase in steps of at most 1");
  }

  switch (spec.strategy) {
    case ShuffleStrategy::identity:
      return Permutation::identity(n);
    case ShuffleStrategy::flip:
      for (std::size_t i = 0; i < n; ++i) m.push_back(n - 1 - i);
      break;
    case ShuffleStrategy::fixed_segment: {
      if (spec.segments > n)
        throw PerturbationError(std::to_string(spec.segments) + " segments exceed " + std::to_string(n) + " frames");
      perm.segments = spec.segments;
      const std::size_t len = n / spec.segments;
      std::vector<std::pair<std::size_t, std::size_t>> blocks;
      for (std::size_t s = 0; s < spec.segments; ++s)
        blocks.emplace_back(s * len, s + 1 == spec.segments ? n : (s + 1) * len);
      std::shuffle(blocks.begin(), blocks.end(), rng);
      for (auto b : blocks) detail::append_range(m, b);
      break;
    }
    case ShuffleStrategy::intra_shot:
      for (auto r : shot_ranges(shot_ids)) {
        const auto start = m.size();
        detail::append_range(m, r);
        std::shuffle(m.begin() + static_cast<std::ptrdiff_t>(start), m.end(), rng);
      }
      break;
    case ShuffleStrategy::neighbour_shot: {
      perm.window = spec.window;
      auto shots = shot_ranges(shot_ids);
      for (std::size_t w = 0; w < shots.size(); w += spec.window) {
        const auto end = std::min(shots.size(), w + spec.window);
        std::shuffle(shots.begin() + static_cast<std::ptrdiff_t>(w), shots.begin() + static_cast<std::ptrdiff_t>(end),
                     rng);
      }
      for (auto r : shots) detail::append_range(m, r);
      break;
    }
    case ShuffleStrategy::any_shot: {
      auto shots = shot_ranges(shot_ids);
      std::shuffle(shots.begin(), shots.end(), rng);
      for (auto r : shots) detail::append_range(m, r);
      break;
    }
  }
  return perm;
}

/// Reorders features, ground truth, annotator columns and shot ids by the
/// same mapping. Shot ids of the result are generally no longer sorted.
inline VideoRecord apply_permutation(const VideoRecord& record, const Permutation& perm) {
  const std::size_t n = record.frames();
  if (perm.size() != n)
    throw PerturbationError("permutation length " + std::to_string(perm.size()) + " vs " + std::to_string(n) +
                            " frames of '" + record.id + "'");
  VideoRecord out = record;
  const std::size_t d = record.dim();
  const std::size_t a = record.annotators();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = perm.mapping[i];
    std::copy_n(record.features.data() + src * d, d, out.features.data() + i * d);
    out.ground_truth[i] = record.ground_truth[src];
    out.shot_ids[i] = record.shot_ids[src];
    for (std::size_t r = 0; r < a; ++r) out.annotator_scores(r, i) = record.annotator_scores(r, src);
  }
  return out;
}

/// Minimum number of insertions, deletions and substitutions turning a
/// into b.
template <std::ranges::random_access_range A, std::ranges::random_access_range B>
std::size_t levenshtein_distance(const A& a, const B& b) {
  const std::size_t n = std::ranges::size(a), m = std::ranges::size(b);
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

enum class SimilarityLevel { frame, shot };

/// 100·(1 − L/N) between the original and permuted frame indices (frame
/// level) or shot-id sequences (shot level). 100 means unchanged.
inline double shuffle_dissimilarity(const Permutation& perm, std::span<const int> shot_ids,
                                    SimilarityLevel level = SimilarityLevel::shot) {
  const std::size_t n = perm.size();
  if (n == 0) return 100.0;
  std::size_t dist = 0;
  if (level == SimilarityLevel::frame) {
    const auto id = Permutation::identity(n);
    dist = levenshtein_distance(id.mapping, perm.mapping);
  } else {
    if (shot_ids.size() != n) throw PerturbationError("shot ids length does not match permutation");
    std::vector<int> permuted(n);
    for (std::size_t i = 0; i < n; ++i) permuted[i] = shot_ids[perm.mapping[i]];
    dist = levenshtein_distance(shot_ids, permuted);
  }
  return 100.0 * (1.0 - static_cast<double>(dist) / static_cast<double>(n));
}

/// With probability p returns a flip or a fixed-segment(M) permutation
/// (even odds), otherwise the identity. Deterministic in `seed`.
inline Permutation sample_augmentation(std::uint64_t seed, double p, std::size_t n, std::span<const int> /*shot_ids*/,
                                       std::size_t segments) {
  if (!(p >= 0.0 && p <= 1.0)) throw PerturbationError("augmentation probability must lie in [0,1]");
  Rng rng = make_rng(seed);
  const bool shuffle = uniform01(rng) < p;
  const bool flip = uniform01(rng) < 0.5;
  if (!shuffle) return Permutation::identity(n);
  ShuffleSpec spec;
  spec.seed = derive_seed(seed, {1});
  if (flip) {
    spec.strategy = ShuffleStrategy::flip;
    return generate_permutation(spec, n);
  }
  spec.strategy = ShuffleStrategy::fixed_segment;
  spec.segments = std::min(segments, n);
  if (spec.segments < 2) {
    auto id = Permutation::identity(n);
    id.strategy = ShuffleStrategy::fixed_segment;
    return id;
  }
  return generate_permutation(spec, n);
}

struct SimilarityRow {
  std::string label;
  ShuffleStrategy strategy = ShuffleStrategy::flip;
  std::size_t iterations = 0;
  double similarity = 0.0;  // mean over videos of the mean over iterations
};

struct SimilarityTableOptions {
  std::size_t iterations = 3;
  std::uint64_t seed = 0;
  std::size_t segments = 4;
  std::size_t window = 3;
  SimilarityLevel level = SimilarityLevel::shot;
};

/// Rows Flip, Intra Shot Shuffle, Fixed Segment Shuffle, Neighbouring Shot
/// Shuffle, Whole Shot Shuffle. Flip is deterministic and runs once.
inline std::vector<SimilarityRow> shuffle_similarity_table(const Dataset& ds, const SimilarityTableOptions& opt = {}) {
  if (ds.videos.empty()) throw DataError("", "videos", "dataset has no videos");
  if (opt.iterations == 0) throw PerturbationError("iterations must be positive");
  const std::pair<const char*, ShuffleStrategy> kinds[] = {{"Flip", ShuffleStrategy::flip},
                                                           {"Intra Shot Shuffle", ShuffleStrategy::intra_shot},
                                                           {"Fixed Segment Shuffle", ShuffleStrategy::fixed_segment},
                                                           {"Neighbouring Shot Shuffle", ShuffleStrategy::neighbour_shot},
                                                           {"Whole Shot Shuffle", ShuffleStrategy::any_shot}};
  std::vector<SimilarityRow> rows;
  for (const auto& [label, strategy] : kinds) {
    SimilarityRow row{label, strategy, strategy == ShuffleStrategy::flip ? 1 : opt.iterations, 0.0};
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
      const auto& video = ds.videos[v];
      double sum = 0.0;
      for (std::size_t it = 0; it < row.iterations; ++it) {
        ShuffleSpec spec;
        spec.strategy = strategy;
        spec.window = opt.window;
        spec.segments = std::min(opt.segments, video.frames());
        spec.seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(strategy), v, it});
        const auto perm = strategy == ShuffleStrategy::fixed_segment && spec.segments < 2
                              ? Permutation::identity(video.frames())
                              : generate_permutation(spec, video.frames(), video.shot_ids);
        sum += shuffle_dissimilarity(perm, video.shot_ids, opt.level);
      }
      row.similarity += sum / static_cast<double>(row.iterations);
    }
    row.similarity /= static_cast<double>(ds.videos.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tprobe
