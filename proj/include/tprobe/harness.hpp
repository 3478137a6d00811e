#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tprobe/dataset.hpp"
#include "tprobe/eval.hpp"
#include "tprobe/models.hpp"
#include "tprobe/optim.hpp"
#include "tprobe/perturbations.hpp"
#include "tprobe/rng.hpp"

namespace tprobe {

enum class Paradigm { invariant_frame_batch, full_video };

NLOHMANN_JSON_SERIALIZE_ENUM(Paradigm, {{Paradigm::invariant_frame_batch, "invariant_frame_batch"},
                                        {Paradigm::full_video, "full_video"}})

struct SplitSettings {
  std::uint64_t seed = 0;
  std::size_t permutations = 3;
  std::size_t folds = 5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string dataset;  // dataset directory
  ScorerConfig model;
  Paradigm paradigm = Paradigm::full_video;
  std::optional<ShuffleSpec> shuffle;
  std::optional<AugmentationSpec> augmentation;
  std::size_t epochs = 50;
  double lr = 5e-5;
  double weight_decay = 1e-5;
  double clip_norm = 3.0;
  std::size_t batch_size = 0;  // 0: 128 frames (invariant) or 1 video (full_video)
  SplitSettings splits;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool save_weights = true;

  std::size_t effective_batch_size() const {
    if (batch_size != 0) return batch_size;
    return paradigm == Paradigm::invariant_frame_batch ? 128 : 1;
  }

  AdamOptions adam() const {
    AdamOptions o;
    o.lr = lr;
    o.weight_decay = weight_decay;
    return o;
  }

  void validate() const {
    model.validate();
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (paradigm == Paradigm::invariant_frame_batch) {
      if (shuffle || augmentation) throw ConfigError("shuffle and augmentation do not apply to the invariant paradigm");
      if (!(model.kind == ScorerKind::mlp || (model.kind == ScorerKind::attention && !model.use_positional_encoding)))
        throw ConfigError("invariant paradigm trains mlp or attention without positional encoding only");
    } else {
      if (effective_batch_size() != 1) throw ConfigError("full_video paradigm uses a batch of one video");
      if (shuffle && augmentation) throw ConfigError("shuffle and augmentation are mutually exclusive");
    }
    if (shuffle) shuffle->validate();
    if (splits.folds < 2) throw ConfigError("splits.folds must be at least 2");
    if (splits.permutations == 0) throw ConfigError("splits.permutations must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"name", c.name},
       {"dataset", c.dataset},
       {"model", c.model},
       {"paradigm", c.paradigm},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"clip_norm", c.clip_norm},
       {"batch_size", c.effective_batch_size()},
       {"splits", {{"seed", c.splits.seed}, {"permutations", c.splits.permutations}, {"folds", c.splits.folds}}},
       {"seed", c.seed},
       {"jobs", c.jobs},
       {"save_weights", c.save_weights}};
  j["shuffle"] = c.shuffle ? nlohmann::json(*c.shuffle) : nlohmann::json(nullptr);
  j["augmentation"] = c.augmentation ? nlohmann::json(*c.augmentation) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  try {
    c.name = j.value("name", d.name);
    c.dataset = j.value("dataset", d.dataset);
    if (!j.contains("model")) throw ConfigError("experiment config: missing 'model'");
    c.model = j.at("model").get<ScorerConfig>();
    const auto paradigm = j.value("paradigm", std::string("full_video"));
    c.paradigm = nlohmann::json(paradigm).get<Paradigm>();
    if (nlohmann::json(c.paradigm).get<std::string>() != paradigm)
      throw ConfigError("experiment config: unknown paradigm '" + paradigm + "'");
    c.shuffle.reset();
    c.augmentation.reset();
    if (j.contains("shuffle") && !j["shuffle"].is_null()) c.shuffle = j["shuffle"].get<ShuffleSpec>();
    if (j.contains("augmentation") && !j["augmentation"].is_null())
      c.augmentation = j["augmentation"].get<AugmentationSpec>();
    c.epochs = j.value("epochs", d.epochs);
    c.lr = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.batch_size = j.value("batch_size", d.batch_size);
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      c.splits.seed = s.value("seed", d.splits.seed);
      c.splits.permutations = s.value("permutations", d.splits.permutations);
      c.splits.folds = s.value("folds", d.splits.folds);
    }
    c.seed = j.value("seed", d.seed);
    c.jobs = j.value("jobs", d.jobs);
    c.save_weights = j.value("save_weights", d.save_weights);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const PerturbationError& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto cfg = j.get<ExperimentConfig>();
  // relative dataset paths resolve against the config's directory
  if (!cfg.dataset.empty() && std::filesystem::path(cfg.dataset).is_relative() &&
      !std::filesystem::exists(cfg.dataset))
    cfg.dataset = (path.parent_path() / cfg.dataset).string();
  return cfg;
}

// ---------------------------------------------------------------------------
// Training

using Model = ScorerModel<float>;
using EpochCallback = std::function<void(std::size_t epoch, const Model&)>;

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean step loss per epoch
};

namespace detail {
inline double train_step(Model& model, const Tensor<float>& x, const Tensor<float>& y, const ExperimentConfig& cfg,
                         Rng& rng) {
  typename Model::Cache cache;
  const auto pred = model.forward(x, true, &rng, cache);
  const auto loss = mse_loss(pred, y);
  auto params = model.parameters();
  model.backward(cache, loss.grad);
  clip_grad_norm(params, cfg.clip_norm);
  adam_step(params, cfg.adam());
  return loss.loss;
}
}  // namespace detail

/// Temporally invariant training: every step draws batch_size (frame,
/// target) pairs uniformly with replacement from the frames pooled over
/// all training videos. An epoch is ceil(pooled/batch_size) steps.
inline TrainingLog train_invariant(std::span<const VideoRecord* const> videos, Model& model,
                                   const ExperimentConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  if (videos.empty()) throw ConfigError("train_invariant: empty training set");
  if (!(model.config().kind == ScorerKind::mlp ||
        (model.config().kind == ScorerKind::attention && !model.config().use_positional_encoding)))
    throw ConfigError("train_invariant: model must be mlp or attention without positional encoding");
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t v = 0; v < videos.size(); ++v)
    for (std::size_t f = 0; f < videos[v]->frames(); ++f) pool.emplace_back(v, f);
  const std::size_t batch = cfg.effective_batch_size();
  const std::size_t d = model.config().input_dim;
  const std::size_t steps = (pool.size() + batch - 1) / batch;
  Rng rng = make_rng(seed);
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      Tensor<float> x(batch, d), y(Shape{batch});
      for (std::size_t b = 0; b < batch; ++b) {
        const auto [v, f] = pool[uniform_index(rng, pool.size())];
        const auto row = videos[v]->features.row(f);
        std::copy(row.begin(), row.end(), x.row(b).begin());
        y[b] = static_cast<float>(videos[v]->ground_truth[f]);
      }
      total += detail::train_step(model, x, y, cfg, rng);
    }
    log.epoch_loss.push_back(total / static_cast<double>(steps));
    if (on_epoch) on_epoch(epoch, model);
  }
  return log;
}

/// The permutation a full-video run applies to training video `index` in
/// `epoch`: a shuffle, an augmentation draw, or the identity.
inline Permutation training_permutation(const ExperimentConfig& cfg, std::uint64_t seed, const VideoRecord& video,
                                        std::size_t index, std::size_t epoch) {
  const std::size_t n = video.frames();
  if (cfg.shuffle) {
    ShuffleSpec spec = *cfg.shuffle;
    spec.seed = cfg.shuffle->fixed_per_video ? derive_seed(cfg.shuffle->seed ^ seed, {index})
                                             : derive_seed(cfg.shuffle->seed ^ seed, {index, epoch});
    if (spec.strategy == ShuffleStrategy::fixed_segment) spec.segments = std::min(spec.segments, n);
    if (spec.strategy == ShuffleStrategy::fixed_segment && spec.segments < 2) return Permutation::identity(n);
    return generate_permutation(spec, n, video.shot_ids);
  }
  if (cfg.augmentation) {
    const auto& a = *cfg.augmentation;
    return sample_augmentation(derive_seed(a.seed ^ seed, {index, epoch}), a.p, n, video.shot_ids, a.segments);
  }
  return Permutation::identity(n);
}

/// Full-video training, one video per step in a freshly shuffled order
/// each epoch. Shuffles and augmentation touch only the training copy.
inline TrainingLog train_full_video(std::span<const VideoRecord* const> videos, Model& model,
                                    const ExperimentConfig& cfg, std::uint64_t seed,
                                    const EpochCallback& on_epoch = {}) {
  if (videos.empty()) throw ConfigError("train_full_video: empty training set");
  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (auto idx : order) {
      const VideoRecord& video = *videos[idx];
      const auto perm = training_permutation(cfg, seed, video, idx, epoch);
      if (perm.is_identity()) {
        total += detail::train_step(model, video.features, video.target(), cfg, rng);
      } else {
        const auto shuffled = apply_permutation(video, perm);
        total += detail::train_step(model, shuffled.features, shuffled.target(), cfg, rng);
      }
    }
    log.epoch_loss.push_back(total / static_cast<double>(videos.size()));
    if (on_epoch) on_epoch(epoch, model);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation and reports

/// Scores every listed video in its original order (never shuffled).
inline std::vector<VideoEvalResult> evaluate_videos(const Model& model, std::span<const VideoRecord* const> videos,
                                                    DatasetStyle style) {
  std::vector<VideoEvalResult> out;
  out.reserve(videos.size());
  for (const auto* v : videos) {
    const auto scores = model.score(v->features);
    out.push_back(evaluate_video(std::span<const float>(scores.values()), *v, style));
  }
  return out;
}

inline double mean_kendall(std::span<const VideoEvalResult> r) {
  double s = 0.0;
  for (const auto& v : r) s += v.kendall;
  return r.empty() ? 0.0 : s / static_cast<double>(r.size());
}

inline double mean_spearman(std::span<const VideoEvalResult> r) {
  double s = 0.0;
  for (const auto& v : r) s += v.spearman;
  return r.empty() ? 0.0 : s / static_cast<double>(r.size());
}

struct FoldResult {
  std::size_t permutation = 0;
  std::size_t fold = 0;
  double best_kendall = 0.0;
  double best_spearman = 0.0;  // at the best-Kendall epoch
  std::size_t best_epoch = 0;
  std::vector<VideoEvalResult> videos;  // at the best epoch
  std::vector<double> epoch_kendall;
  std::vector<double> epoch_loss;
  std::size_t degenerate_count = 0;
};

struct RunReport {
  std::string name;
  std::string dataset_name;
  nlohmann::json config;
  std::vector<FoldResult> folds;
  double aggregate_kendall = 0.0;
  double aggregate_spearman = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string status = "complete";
  std::string error;

  void recompute_aggregate() {
    aggregate_kendall = aggregate_spearman = 0.0;
    if (folds.empty()) return;
    for (const auto& f : folds) {
      aggregate_kendall += f.best_kendall;
      aggregate_spearman += f.best_spearman;
    }
    aggregate_kendall /= static_cast<double>(folds.size());
    aggregate_spearman /= static_cast<double>(folds.size());
  }
};

inline void to_json(nlohmann::json& j, const VideoEvalResult& r) {
  j = {{"video_id", r.video_id}, {"kendall", r.kendall}, {"spearman", r.spearman}, {"degenerate", r.degenerate}};
}
inline void from_json(const nlohmann::json& j, VideoEvalResult& r) {
  r.video_id = j.at("video_id").get<std::string>();
  r.kendall = j.at("kendall").get<double>();
  r.spearman = j.at("spearman").get<double>();
  r.degenerate = j.value("degenerate", false);
}
inline void to_json(nlohmann::json& j, const FoldResult& f) {
  j = {{"permutation", f.permutation},     {"fold", f.fold},           {"best_kendall", f.best_kendall},
       {"best_spearman", f.best_spearman}, {"best_epoch", f.best_epoch}, {"videos", f.videos},
       {"epoch_kendall", f.epoch_kendall}, {"epoch_loss", f.epoch_loss}, {"degenerate_count", f.degenerate_count}};
}
inline void from_json(const nlohmann::json& j, FoldResult& f) {
  f.permutation = j.at("permutation").get<std::size_t>();
  f.fold = j.at("fold").get<std::size_t>();
  f.best_kendall = j.at("best_kendall").get<double>();
  f.best_spearman = j.at("best_spearman").get<double>();
  f.best_epoch = j.at("best_epoch").get<std::size_t>();
  f.videos = j.value("videos", std::vector<VideoEvalResult>{});
  f.epoch_kendall = j.value("epoch_kendall", std::vector<double>{});
  f.epoch_loss = j.value("epoch_loss", std::vector<double>{});
  f.degenerate_count = j.value("degenerate_count", std::size_t{0});
}
inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = {{"name", r.name},
       {"dataset", r.dataset_name},
       {"seed", r.seed},
       {"status", r.status},
       {"config", r.config},
       {"aggregate", {{"kendall", r.aggregate_kendall}, {"spearman", r.aggregate_spearman}}},
       {"wall_seconds", r.wall_seconds},
       {"folds", r.folds}};
  if (!r.error.empty()) j["error"] = r.error;
}
inline void from_json(const nlohmann::json& j, RunReport& r) {
  r.name = j.at("name").get<std::string>();
  r.dataset_name = j.at("dataset").get<std::string>();
  r.seed = j.value("seed", std::uint64_t{0});
  r.status = j.value("status", std::string("complete"));
  r.config = j.value("config", nlohmann::json::object());
  r.aggregate_kendall = j.at("aggregate").at("kendall").get<double>();
  r.aggregate_spearman = j.at("aggregate").at("spearman").get<double>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.folds = j.value("folds", std::vector<FoldResult>{});
  r.error = j.value("error", std::string());
}

inline std::filesystem::path runs_root() {
  if (const char* env = std::getenv("TEMPORAL_PROBE_RUNS_DIR"); env && *env) return env;
  return "runs";
}

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // runs/<name>/ when set
  std::size_t jobs = 1;
  std::function<void(const FoldResult&)> on_fold;
};

/// Trains and evaluates one (permutation, fold) job. The test videos are
/// evaluated unshuffled after every epoch; the best epoch by mean Kendall
/// is kept, along with its weights.
inline FoldResult run_fold(const ExperimentConfig& cfg, const Dataset& ds, const Fold& fold, std::size_t permutation,
                           std::size_t fold_index, std::vector<Tensor<float>>* best_weights = nullptr) {
  std::vector<const VideoRecord*> train, test;
  for (const auto& id : fold.train) train.push_back(&ds.video(id));
  for (const auto& id : fold.test) test.push_back(&ds.video(id));
  const std::uint64_t job_seed = derive_seed(cfg.seed, {permutation, fold_index});
  auto model = build_model(cfg.model, derive_seed(job_seed, {0}));

  FoldResult result;
  result.permutation = permutation;
  result.fold = fold_index;
  bool have_best = false;
  auto on_epoch = [&](std::size_t epoch, const Model& m) {
    auto videos = evaluate_videos(m, test, ds.style);
    const double k = mean_kendall(videos);
    result.epoch_kendall.push_back(k);
    if (!have_best || k > result.best_kendall) {
      have_best = true;
      result.best_kendall = k;
      result.best_spearman = mean_spearman(videos);
      result.best_epoch = epoch;
      result.degenerate_count =
          static_cast<std::size_t>(std::count_if(videos.begin(), videos.end(), [](auto& v) { return v.degenerate; }));
      result.videos = std::move(videos);
      if (best_weights) *best_weights = snapshot_weights(m);
    }
  };
  const auto train_seed = derive_seed(job_seed, {1});
  const auto log = cfg.paradigm == Paradigm::invariant_frame_batch
                       ? train_invariant(train, model, cfg, train_seed, on_epoch)
                       : train_full_video(train, model, cfg, train_seed, on_epoch);
  result.epoch_loss = log.epoch_loss;
  return result;
}

namespace detail {
inline void write_fold_outputs(const std::filesystem::path& dir, const FoldResult& f, const ExperimentConfig& cfg,
                               const std::vector<Tensor<float>>& weights) {
  const std::string tag = "p" + std::to_string(f.permutation) + "_f" + std::to_string(f.fold);
  std::ofstream csv(dir / ("scores_" + tag + ".csv"));
  write_results_csv(csv, f.videos);
  if (cfg.save_weights && !weights.empty()) {
    auto model = build_model(cfg.model, 0);
    restore_weights(model, weights);
    save_weights(model, dir / ("weights_" + tag));
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Comparison tables

/// Row label of a report: its shuffle strategy, "augmented", "invariant"
/// or "unshuffled".
inline std::string perturbation_label(const nlohmann::json& config) {
  if (config.value("paradigm", std::string()) == "invariant_frame_batch") return "invariant";
  if (config.contains("shuffle") && !config["shuffle"].is_null())
    return config["shuffle"].at("strategy").get<std::string>();
  if (config.contains("augmentation") && !config["augmentation"].is_null()) return "augmented";
  return "unshuffled";
}

inline std::string model_label(const nlohmann::json& config) {
  return config.at("model").get<ScorerConfig>().label();
}

struct ComparisonTable {
  std::string dataset;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> cells;  // [row][column]
  std::vector<std::optional<std::size_t>> best_row;       // per column

  std::optional<double> at(const std::string& row, const std::string& col) const {
    const auto r = std::find(rows.begin(), rows.end(), row);
    const auto c = std::find(columns.begin(), columns.end(), col);
    if (r == rows.end() || c == columns.end()) return std::nullopt;
    return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())];
  }
};

/// Rows are perturbations (in the order unshuffled, fixed_segment, flip,
/// intra_shot, neighbour_shot, any_shot, augmented, invariant), columns
/// are model labels, cells are aggregate Kendall; the column maximum is
/// marked once.
inline ComparisonTable aggregate_reports(std::span<const RunReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_reports: no reports");
  static const std::vector<std::string> row_order = {"unshuffled",     "fixed_segment", "flip",      "intra_shot",
                                                     "neighbour_shot", "any_shot",      "augmented", "invariant"};
  ComparisonTable t;
  t.dataset = reports.front().dataset_name;
  for (const auto& r : reports) {
    if (r.dataset_name != t.dataset)
      throw DataError("", "reports", "mismatched datasets '" + t.dataset + "' and '" + r.dataset_name + "'");
    const auto row = perturbation_label(r.config);
    const auto col = model_label(r.config);
    if (std::find(t.rows.begin(), t.rows.end(), row) == t.rows.end()) t.rows.push_back(row);
    if (std::find(t.columns.begin(), t.columns.end(), col) == t.columns.end()) t.columns.push_back(col);
  }
  std::stable_sort(t.rows.begin(), t.rows.end(), [&](const std::string& a, const std::string& b) {
    return std::find(row_order.begin(), row_order.end(), a) < std::find(row_order.begin(), row_order.end(), b);
  });
  t.cells.assign(t.rows.size(), std::vector<std::optional<double>>(t.columns.size()));
  for (const auto& r : reports) {
    const auto ri = static_cast<std::size_t>(
        std::find(t.rows.begin(), t.rows.end(), perturbation_label(r.config)) - t.rows.begin());
    const auto ci = static_cast<std::size_t>(
        std::find(t.columns.begin(), t.columns.end(), model_label(r.config)) - t.columns.begin());
    if (t.cells[ri][ci]) throw DataError("", "reports", "two reports for " + t.rows[ri] + " / " + t.columns[ci]);
    t.cells[ri][ci] = r.aggregate_kendall;
  }
  t.best_row.assign(t.columns.size(), std::nullopt);
  for (std::size_t c = 0; c < t.columns.size(); ++c)
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      if (t.cells[r][c] && (!t.best_row[c] || *t.cells[r][c] > *t.cells[*t.best_row[c]][c])) t.best_row[c] = r;
  return t;
}

/// Header "shuffle,<models...>", one row per perturbation (empty cell when
/// missing), and a final "best" row naming each column's best perturbation.
inline void write_table_csv(std::ostream& out, const ComparisonTable& t) {
  out << "shuffle";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n' << std::setprecision(6) << std::fixed;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out << t.rows[r];
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      out << ',';
      if (t.cells[r][c]) out << *t.cells[r][c];
    }
    out << '\n';
  }
  out << "best";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << ',' << (t.best_row[c] ? t.rows[*t.best_row[c]] : "");
  out << '\n';
}

inline std::string format_table(const ComparisonTable& t) {
  std::size_t w0 = std::string("shuffle").size();
  for (const auto& r : t.rows) w0 = std::max(w0, r.size());
  std::vector<std::size_t> widths;
  for (const auto& c : t.columns) widths.push_back(std::max<std::size_t>(c.size(), 9));
  std::ostringstream os;
  os << "dataset: " << t.dataset << "  (Kendall; * = best per column)\n";
  os << std::left << std::setw(static_cast<int>(w0)) << "shuffle";
  for (std::size_t c = 0; c < t.columns.size(); ++c)
    os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << t.columns[c];
  os << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(w0)) << t.rows[r];
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::ostringstream cell;
      if (t.cells[r][c])
        cell << std::fixed << std::setprecision(3) << *t.cells[r][c] << (t.best_row[c] == r ? "*" : " ");
      else
        cell << "- ";
      os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

inline void write_report_json(const std::filesystem::path& dir, const RunReport& report) {
  std::ofstream out(dir / "report.json");
  out << nlohmann::json(report).dump(2) << '\n';
}

/// Runs every (permutation, fold) job of the protocol and aggregates the
/// per-fold best correlations. Jobs are independent and may run on
/// `options.jobs` threads; results are ordered by (permutation, fold).
inline RunReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds, const RunOptions& options = {}) {
  cfg.validate();
  if (cfg.model.input_dim != ds.dim)
    throw ConfigError("model input_dim " + std::to_string(cfg.model.input_dim) + " does not match dataset D=" +
                      std::to_string(ds.dim));
  const auto start = std::chrono::steady_clock::now();
  const auto plan = generate_splits(ds, cfg.splits.seed, cfg.splits.permutations, cfg.splits.folds);

  RunReport report;
  report.name = cfg.name;
  report.dataset_name = ds.name;
  report.config = cfg;
  report.seed = cfg.seed;
  if (options.output_dir) std::filesystem::create_directories(*options.output_dir);

  struct Job {
    std::size_t p, f;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < plan.permutation_count; ++p)
    for (std::size_t f = 0; f < plan.folds; ++f) jobs.push_back({p, f});
  std::vector<std::optional<FoldResult>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::string failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (!failure.empty()) return;
      }
      try {
        std::vector<Tensor<float>> weights;
        auto r = run_fold(cfg, ds, plan.assignments[jobs[i].p][jobs[i].f], jobs[i].p, jobs[i].f,
                          options.output_dir && cfg.save_weights ? &weights : nullptr);
        if (options.output_dir) detail::write_fold_outputs(*options.output_dir, r, cfg, weights);
        std::lock_guard lock(mu);
        if (options.on_fold) options.on_fold(r);
        results[i] = std::move(r);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (failure.empty()) failure = e.what();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& r : results)
    if (r) report.folds.push_back(std::move(*r));
  report.recompute_aggregate();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!failure.empty()) {
    report.status = "failed";
    report.error = failure;
    if (options.output_dir) write_report_json(*options.output_dir, report);
    throw std::runtime_error("experiment '" + cfg.name + "' failed: " + failure);
  }
  if (options.output_dir) {
    write_report_json(*options.output_dir, report);
    std::ofstream table(*options.output_dir / "table.csv");
    const RunReport single[] = {report};
    write_table_csv(table, aggregate_reports(single));
  }
  return report;
}

}  // namespace tprobe
