#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tprobe/rng.hpp"
#include "tprobe/tensor.hpp"

namespace tprobe {

/// Malformed or inconsistent input data. `video()` and `field()` are empty
/// when the problem is not tied to one video.
class DataError : public std::runtime_error {
 public:
  DataError(std::string video, std::string field, const std::string& message)
      : std::runtime_error(format(video, field, message)), video_(std::move(video)), field_(std::move(field)) {}
  explicit DataError(const std::string& message) : DataError("", "", message) {}

  const std::string& video() const { return video_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& video, const std::string& field, const std::string& message) {
    std::string out;
    if (!video.empty()) out += "video '" + video + "': ";
    if (!field.empty()) out += field + ": ";
    return out + message;
  }
  std::string video_, field_;
};

/// tvsum_style: raw annotator scores in [1,5]; summe_style: in [0,1].
enum class DatasetStyle { tvsum_style, summe_style };

inline std::string to_string(DatasetStyle s) { return s == DatasetStyle::tvsum_style ? "tvsum" : "summe"; }

inline DatasetStyle parse_style(const std::string& s) {
  if (s == "tvsum" || s == "tvsum_style") return DatasetStyle::tvsum_style;
  if (s == "summe" || s == "summe_style") return DatasetStyle::summe_style;
  throw DataError("", "style", "unknown dataset style '" + s + "'");
}

inline std::pair<double, double> score_range(DatasetStyle s) {
  return s == DatasetStyle::tvsum_style ? std::pair{1.0, 5.0} : std::pair{0.0, 1.0};
}

/// Inclusive [start, end] frame range in the original frame rate.
struct ShotBoundary {
  std::int64_t start = 0;
  std::int64_t end = 0;
  friend bool operator==(const ShotBoundary&, const ShotBoundary&) = default;
};

struct VideoRecord {
  std::string id;
  Tensor<float> features;            // N×D
  Tensor<double> annotator_scores;   // A×N, raw scale
  std::vector<double> ground_truth;  // N, in [0,1]
  std::vector<ShotBoundary> shot_boundaries_original;
  std::vector<int> shot_ids;  // N
  int sample_rate = 15;

  std::size_t frames() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t annotators() const { return annotator_scores.rows(); }

  Tensor<float> target() const {
    return Tensor<float>(Shape{ground_truth.size()}, std::vector<float>(ground_truth.begin(), ground_truth.end()));
  }

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

struct Dataset {
  std::string name;
  DatasetStyle style = DatasetStyle::tvsum_style;
  std::size_t dim = 0;
  int sample_rate = 15;
  std::vector<VideoRecord> videos;

  const VideoRecord& video(const std::string& id) const {
    for (const auto& v : videos)
      if (v.id == id) return v;
    throw DataError(id, "", "no such video in dataset '" + name + "'");
  }
};

// ---------------------------------------------------------------------------
// Ground truth and shot structure

/// Per-frame mean over annotators, after mapping tvsum_style scores onto
/// [0,1] via (s−1)/4.
inline std::vector<double> compute_ground_truth(const Tensor<double>& annotator_scores, DatasetStyle style) {
  const std::size_t a = annotator_scores.rows();
  if (a == 0 || annotator_scores.size() == 0) throw DataError("", "annotator_scores", "no annotators");
  const std::size_t n = annotator_scores.cols();
  const auto [lo, hi] = score_range(style);
  std::vector<double> gt(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0.0;
    for (std::size_t r = 0; r < a; ++r) {
      const double s = annotator_scores(r, j);
      sum += (s - lo) / (hi - lo);
    }
    gt[j] = std::clamp(sum / static_cast<double>(a), 0.0, 1.0);
  }
  return gt;
}

/// Throws unless boundaries are sorted, non-overlapping, contiguous and
/// start at frame 0.
inline void validate_boundaries(const std::vector<ShotBoundary>& boundaries, const std::string& video = "") {
  const std::string field = "shot_boundaries_original";
  if (boundaries.empty()) throw DataError(video, field, "empty boundary list");
  if (boundaries.front().start != 0) throw DataError(video, field, "first shot must start at frame 0");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const auto& b = boundaries[i];
    if (b.end < b.start) throw DataError(video, field, "shot " + std::to_string(i) + " ends before it starts");
    if (i > 0 && b.start != boundaries[i - 1].end + 1)
      throw DataError(video, field, "shot " + std::to_string(i) + " is not contiguous with the previous shot");
  }
}

/// Subsampled frame i belongs to the shot containing original frame
/// i·sample_rate; frames past the last boundary clamp to the last shot.
/// Shots that receive no subsampled frame are skipped, so ids are dense.
inline std::vector<int> map_shots_to_subsampled(const std::vector<ShotBoundary>& boundaries, std::size_t n_subsampled,
                                                int sample_rate) {
  if (boundaries.empty()) throw DataError("", "shot_boundaries_original", "empty boundary list");
  if (sample_rate <= 0) throw DataError("", "sample_rate", "must be positive");
  std::vector<int> ids(n_subsampled);
  std::size_t shot = 0;
  int dense = 0;
  std::size_t prev_shot = 0;
  for (std::size_t i = 0; i < n_subsampled; ++i) {
    const auto original = static_cast<std::int64_t>(i) * sample_rate;
    while (shot + 1 < boundaries.size() && original > boundaries[shot].end) ++shot;
    if (i > 0 && shot != prev_shot) ++dense;
    prev_shot = shot;
    ids[i] = dense;
  }
  return ids;
}

inline std::size_t shot_count(const std::vector<int>& shot_ids) {
  return shot_ids.empty() ? 0 : static_cast<std::size_t>(shot_ids.back()) + 1;
}

/// Non-decreasing, starts at 0, steps of at most 1.
inline bool valid_shot_ids(const std::vector<int>& shot_ids) {
  if (shot_ids.empty() || shot_ids.front() != 0) return false;
  for (std::size_t i = 1; i < shot_ids.size(); ++i) {
    const int step = shot_ids[i] - shot_ids[i - 1];
    if (step < 0 || step > 1) return false;
  }
  return true;
}

/// Builds a VideoRecord from raw parts, validating every invariant and
/// deriving ground truth and shot ids.
inline VideoRecord make_record(std::string id, Tensor<float> features, Tensor<double> annotator_scores,
                               std::vector<ShotBoundary> boundaries, DatasetStyle style, int sample_rate) {
  if (features.rank() != 2 || features.rows() == 0) throw DataError(id, "features", "need at least one frame");
  for (auto v : features.values())
    if (!std::isfinite(v)) throw DataError(id, "features", "non-finite value");
  if (annotator_scores.rows() == 0) throw DataError(id, "annotator_scores", "no annotators");
  if (annotator_scores.cols() != features.rows())
    throw DataError(id, "annotator_scores",
                    "length " + std::to_string(annotator_scores.cols()) + " does not match " +
                        std::to_string(features.rows()) + " frames");
  const auto [lo, hi] = score_range(style);
  for (auto s : annotator_scores.values())
    if (!(s >= lo && s <= hi))
      throw DataError(id, "annotator_scores",
                      "score " + std::to_string(s) + " outside [" + std::to_string(lo) + "," + std::to_string(hi) +
                          "] for " + to_string(style) + " style");
  validate_boundaries(boundaries, id);
  VideoRecord rec;
  rec.id = std::move(id);
  rec.ground_truth = compute_ground_truth(annotator_scores, style);
  rec.shot_ids = map_shots_to_subsampled(boundaries, features.rows(), sample_rate);
  rec.features = std::move(features);
  rec.annotator_scores = std::move(annotator_scores);
  rec.shot_boundaries_original = std::move(boundaries);
  rec.sample_rate = sample_rate;
  return rec;
}

// ---------------------------------------------------------------------------
// Feature files: 16-byte header (magic "TPFT", u32 version, u32 N, u32 D)
// followed by N·D little-endian float32 values, row-major.

inline constexpr std::array<char, 4> kFeatureMagic{'T', 'P', 'F', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
}  // namespace detail

inline void write_features(const std::filesystem::path& path, const Tensor<float>& features) {
  static_assert(std::endian::native == std::endian::little, "feature files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("", "", "cannot write " + path.string());
  out.write(kFeatureMagic.data(), 4);
  detail::put_u32(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(features.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(features.cols()));
  out.write(reinterpret_cast<const char*>(features.data()), static_cast<std::streamsize>(features.size() * 4));
  if (!out) throw DataError("", "", "failed writing " + path.string());
}

inline Tensor<float> read_features(const std::filesystem::path& path, const std::string& video = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(video, "features", "cannot open " + path.string());
  unsigned char header[16];
  in.read(reinterpret_cast<char*>(header), 16);
  if (in.gcount() != 16) throw DataError(video, "features", "truncated header in " + path.string());
  if (std::memcmp(header, kFeatureMagic.data(), 4) != 0) throw DataError(video, "features", "bad magic");
  const auto version = detail::get_u32(header + 4);
  if (version != kFeatureVersion) throw DataError(video, "features", "unsupported version " + std::to_string(version));
  const std::size_t n = detail::get_u32(header + 8), d = detail::get_u32(header + 12);
  Tensor<float> features(n, d);
  in.read(reinterpret_cast<char*>(features.data()), static_cast<std::streamsize>(n * d * 4));
  if (static_cast<std::size_t>(in.gcount()) != n * d * 4)
    throw DataError(video, "features", "payload shorter than N·D = " + std::to_string(n * d) + " values");
  if (in.peek() != std::char_traits<char>::eof())
    throw DataError(video, "features", "trailing bytes after N·D = " + std::to_string(n * d) + " values");
  return features;
}

// ---------------------------------------------------------------------------
// Dataset directories: manifest.json + <id>.feat + <id>.ann.json

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("", "manifest", "missing " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("", "manifest", std::string("malformed JSON: ") + e.what());
  }
  Dataset ds;
  try {
    ds.name = manifest.at("name").get<std::string>();
    ds.style = parse_style(manifest.at("style").get<std::string>());
    ds.dim = manifest.at("D").get<std::size_t>();
    ds.sample_rate = manifest.value("sample_rate", 15);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("", "manifest", e.what());
  }
  if (ds.dim == 0) throw DataError("", "manifest", "D must be positive");
  if (!manifest.contains("videos") || !manifest["videos"].is_array())
    throw DataError("", "manifest", "missing video list");
  std::set<std::string> seen;
  for (const auto& entry : manifest["videos"]) {
    const auto id = entry.is_string() ? entry.get<std::string>() : entry.at("id").get<std::string>();
    if (!seen.insert(id).second) throw DataError(id, "manifest", "duplicate video id");
    auto features = read_features(dir / (id + ".feat"), id);
    if (features.cols() != ds.dim)
      throw DataError(id, "features",
                      "dimension mismatch: rows have length " + std::to_string(features.cols()) + ", manifest D=" +
                          std::to_string(ds.dim));
    std::ifstream af(dir / (id + ".ann.json"));
    if (!af) throw DataError(id, "annotations", "missing " + (dir / (id + ".ann.json")).string());
    Tensor<double> scores;
    std::vector<ShotBoundary> boundaries;
    try {
      const auto ann = nlohmann::json::parse(af);
      const auto rows = ann.at("annotator_scores").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw DataError(id, "annotator_scores", "no annotators");
      scores = Tensor<double>(rows.size(), rows.front().size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.front().size())
          throw DataError(id, "annotator_scores", "annotator " + std::to_string(r) + " has a different length");
        std::copy(rows[r].begin(), rows[r].end(), scores.row(r).begin());
      }
      for (const auto& b : ann.at("shot_boundaries_original")) {
        if (!b.is_array() || b.size() != 2) throw DataError(id, "shot_boundaries_original", "expected [start,end]");
        boundaries.push_back({b[0].get<std::int64_t>(), b[1].get<std::int64_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(id, "annotations", e.what());
    }
    ds.videos.push_back(make_record(id, std::move(features), std::move(scores), std::move(boundaries), ds.style,
                                    ds.sample_rate));
  }
  if (ds.videos.empty()) throw DataError("", "manifest", "dataset lists no videos");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& v : ds.videos) {
    ids.push_back(v.id);
    write_features(dir / (v.id + ".feat"), v.features);
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t r = 0; r < v.annotator_scores.rows(); ++r) {
      auto row = v.annotator_scores.row(r);
      scores.push_back(std::vector<double>(row.begin(), row.end()));
    }
    nlohmann::json bounds = nlohmann::json::array();
    for (const auto& b : v.shot_boundaries_original) bounds.push_back({b.start, b.end});
    std::ofstream af(dir / (v.id + ".ann.json"));
    af << nlohmann::json{{"annotator_scores", scores}, {"shot_boundaries_original", bounds}}.dump() << '\n';
    if (!af) throw DataError(v.id, "annotations", "failed writing");
  }
  std::ofstream mf(dir / "manifest.json");
  mf << nlohmann::json{{"name", ds.name},
                       {"style", to_string(ds.style)},
                       {"D", ds.dim},
                       {"sample_rate", ds.sample_rate},
                       {"videos", ids}}
            .dump(2)
     << '\n';
  if (!mf) throw DataError("", "manifest", "failed writing " + (dir / "manifest.json").string());
}

// ---------------------------------------------------------------------------
// Cross-validation splits

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> test;
  friend bool operator==(const Fold&, const Fold&) = default;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::size_t permutation_count = 3;
  std::size_t folds = 5;
  std::vector<std::vector<Fold>> assignments;  // [permutation][fold]
  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

inline void to_json(nlohmann::json& j, const Fold& f) { j = {{"train", f.train}, {"test", f.test}}; }
inline void from_json(const nlohmann::json& j, Fold& f) {
  f.train = j.at("train").get<std::vector<std::string>>();
  f.test = j.at("test").get<std::vector<std::string>>();
}
inline void to_json(nlohmann::json& j, const SplitPlan& p) {
  j = {{"seed", p.seed}, {"permutations", p.permutation_count}, {"folds", p.folds}, {"assignments", p.assignments}};
}
inline void from_json(const nlohmann::json& j, SplitPlan& p) {
  p.seed = j.at("seed").get<std::uint64_t>();
  p.permutation_count = j.at("permutations").get<std::size_t>();
  p.folds = j.at("folds").get<std::size_t>();
  p.assignments = j.at("assignments").get<std::vector<std::vector<Fold>>>();
}

/// Per permutation: shuffle the ids with a seeded generator and deal them
/// round-robin into `folds` test sets; each fold trains on the rest.
inline SplitPlan generate_splits(const Dataset& ds, std::uint64_t seed, std::size_t permutations = 3,
                                 std::size_t folds = 5) {
  if (folds < 2) throw DataError("", "splits", "need at least 2 folds");
  if (ds.videos.size() < folds)
    throw DataError("", "splits",
                    std::to_string(ds.videos.size()) + " videos cannot fill " + std::to_string(folds) + " folds");
  SplitPlan plan{seed, permutations, folds, {}};
  std::vector<std::string> ids;
  for (const auto& v : ds.videos) ids.push_back(v.id);
  for (std::size_t p = 0; p < permutations; ++p) {
    auto order = ids;
    Rng rng = make_rng(derive_seed(seed, {p}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Fold> row(folds);
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (std::size_t f = 0; f < folds; ++f) {
        if (i % folds == f)
          row[f].test.push_back(order[i]);
        else
          row[f].train.push_back(order[i]);
      }
    }
    plan.assignments.push_back(std::move(row));
  }
  return plan;
}

}  // namespace tprobe
