// tprobe: command-line front end for the temporal probe toolkit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tprobe/tprobe.hpp"

namespace fs = std::filesystem;
using namespace tprobe;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kCheckFailed = 3;

struct Globals {
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
};

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed ? *g.seed : fallback; }

int cmd_validate(const std::string& dir) {
  const auto ds = load_dataset(dir);
  std::size_t frames = 0, shots = 0;
  for (const auto& v : ds.videos) {
    frames += v.frames();
    shots += shot_count(v.shot_ids);
  }
  std::cout << "dataset " << ds.name << ": style=" << to_string(ds.style) << " D=" << ds.dim
            << " sample_rate=" << ds.sample_rate << " videos=" << ds.videos.size() << " frames=" << frames
            << " shots=" << shots << "\nok\n";
  return kOk;
}

int cmd_splits(const std::string& dir, std::uint64_t seed, std::size_t perms, std::size_t folds,
               const std::string& out) {
  const auto ds = load_dataset(dir);
  const auto plan = generate_splits(ds, seed, perms, folds);
  const auto text = nlohmann::json(plan).dump(2);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << text << '\n';
    std::cout << "wrote " << out << '\n';
  }
  return kOk;
}

int cmd_train(const std::string& config_path, const Globals& g, const std::string& name_override,
              std::size_t epochs_override) {
  if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
  auto cfg = load_experiment_config(config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!name_override.empty()) cfg.name = name_override;
  if (epochs_override) cfg.epochs = epochs_override;
  cfg.jobs = std::max(cfg.jobs, g.jobs);
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("config has no dataset path");
  const auto ds = load_dataset(cfg.dataset);
  const auto out_dir = runs_root() / cfg.name;
  std::cout << "experiment " << cfg.name << " seed=" << cfg.seed << " model=" << cfg.model.label()
            << " perturbation=" << perturbation_label(nlohmann::json(cfg)) << " output=" << out_dir.string() << '\n';
  RunOptions opts;
  opts.output_dir = out_dir;
  opts.jobs = cfg.jobs;
  opts.on_fold = [](const FoldResult& f) {
    std::cout << "  permutation " << f.permutation << " fold " << f.fold << ": best kendall " << std::fixed
              << std::setprecision(4) << f.best_kendall << " spearman " << f.best_spearman << " at epoch "
              << f.best_epoch << '\n'
              << std::defaultfloat;
  };
  const auto report = run_experiment(cfg, ds, opts);
  std::cout << std::fixed << std::setprecision(4) << "aggregate kendall " << report.aggregate_kendall << " spearman "
            << report.aggregate_spearman << " over " << report.folds.size() << " folds (" << std::setprecision(1)
            << report.wall_seconds << " s)\n";
  return kOk;
}

int cmd_evaluate(const std::string& weights, const std::string& dir, const std::string& out) {
  const auto model = load_weights<float>(weights);
  const auto ds = load_dataset(dir);
  std::vector<const VideoRecord*> videos;
  for (const auto& v : ds.videos) videos.push_back(&v);
  const auto results = evaluate_videos(model, videos, ds.style);
  if (out.empty()) {
    write_results_csv(std::cout, results);
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    write_results_csv(f, results);
  }
  std::cerr << std::fixed << std::setprecision(4) << "mean kendall " << mean_kendall(results) << " spearman "
            << mean_spearman(results) << " over " << results.size() << " videos\n";
  return kOk;
}

int cmd_shuffle_table(const std::string& dir, const SimilarityTableOptions& opt) {
  const auto ds = load_dataset(dir);
  const auto rows = shuffle_similarity_table(ds, opt);
  std::cout << "dataset " << ds.name << " ("
            << (opt.level == SimilarityLevel::shot ? "shot-level" : "frame-level") << " similarity)\n";
  std::cout << std::left << std::setw(28) << "Shuffle type" << std::setw(20) << "Shuffle Iterations"
            << "Levenshtein Distance (scaled to 100)\n";
  for (const auto& r : rows)
    std::cout << std::left << std::setw(28) << r.label << std::setw(20) << r.iterations << std::fixed
              << std::setprecision(2) << r.similarity << '\n';
  return kOk;
}

int cmd_heatmap(const std::string& dir, const std::string& video, const std::string& out, std::size_t pixels) {
  const auto ds = load_dataset(dir);
  const auto pair = make_heatmaps(ds.video(video));
  const auto files = export_heatmap(pair, out.empty() ? (runs_root() / "heatmaps") : fs::path(out), pixels);
  const auto agree = similarity_agreement(pair);
  std::cout << "wrote " << files.cosine_csv.string() << ", " << files.gt_diff_csv.string() << ", "
            << files.cosine_png.string() << ", " << files.gt_diff_png.string() << '\n';
  std::cout << "similarity agreement (upper-triangle correlation of cosine and -gt_diff): " << std::fixed
            << std::setprecision(4) << agree.value << (agree.degenerate ? " (degenerate)" : "") << '\n';
  if (!pair.zero_rows.empty()) std::cout << pair.zero_rows.size() << " all-zero feature rows\n";
  return kOk;
}

ScorerConfig read_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return j.contains("model") ? j.at("model").get<ScorerConfig>() : j.get<ScorerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_gradcheck(const std::string& path, const Globals& g, std::size_t frames, std::size_t dim, bool full) {
  auto cfg = read_model_config(path);
  if (!full) {
    // shrink every width to `dim` so the check runs in seconds
    const std::size_t d = dim - dim % 2;
    cfg.input_dim = std::min(cfg.input_dim, d);
    cfg.attention_dim = std::min(cfg.attention_dim, d);
    cfg.ffn_dim = std::min(cfg.ffn_dim, d);
    for (auto& h : cfg.hidden_dims) h = std::min(h, d);
  }
  cfg.validate();
  ScorerCheckOptions opt;
  opt.frames = frames;
  const auto report = check_scorer_gradients(cfg, seed_or(g, 0), opt);
  std::cout << "gradient check " << cfg.label() << " N=" << frames << " D=" << cfg.input_dim << '\n';
  for (const auto& b : report.blocks)
    std::cout << "  " << std::left << std::setw(24) << b.name << " checked " << std::setw(4) << b.checked
              << " max rel error " << std::scientific << std::setprecision(3) << b.max_error << std::defaultfloat
              << '\n';
  std::cout << (report.passed() ? "PASS" : "FAIL") << " max " << std::scientific << report.max_error() << " < "
            << report.tolerance << '\n';
  return report.passed() ? kOk : kCheckFailed;
}

int cmd_synth(const std::string& kind, const std::string& out, const Globals& g, SynthOptions opt) {
  opt.seed = seed_or(g, opt.seed);
  const auto ds = make_synthetic_dataset(parse_synth_kind(kind), opt);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.name << " (" << ds.videos.size() << " videos, N=" << opt.frames << ", D=" << opt.dim
            << ") to " << out << '\n';
  return kOk;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& csv) {
  std::vector<RunReport> reports;
  for (const auto& p : paths) {
    fs::path path = p;
    if (fs::is_directory(path)) path /= "report.json";
    std::ifstream in(path);
    if (!in) throw DataError("", "report", "cannot open " + path.string());
    try {
      reports.push_back(nlohmann::json::parse(in).get<RunReport>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("", "report", path.string() + ": " + e.what());
    }
  }
  const auto table = aggregate_reports(reports);
  std::cout << format_table(table);
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw std::runtime_error("cannot write " + csv);
    write_table_csv(f, table);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tprobe: train frame-importance scorers, perturb temporal order, measure rank correlation"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--jobs", g.jobs, "Parallel folds")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed_value, "Root seed (overrides configs)");

  std::string dataset, config, weights, out, video, kind;
  std::uint64_t split_seed = 0;
  std::size_t perms = 3, folds = 5;

  auto* validate = app.add_subcommand("validate", "Check a dataset directory");
  validate->add_option("dataset", dataset)->required();

  auto* splits = app.add_subcommand("splits", "Emit the cross-validation split plan");
  splits->add_option("dataset", dataset)->required();
  auto* split_seed_opt = splits->add_option("--seed", split_seed, "Split seed");
  splits->add_option("--permutations", perms)->check(CLI::PositiveNumber);
  splits->add_option("--folds", folds)->check(CLI::Range(2, 1000));
  splits->add_option("--out", out, "Write JSON here instead of stdout");

  auto* train = app.add_subcommand("train", "Run an experiment config");
  std::string name_override;
  std::size_t epochs_override = 0;
  std::uint64_t train_seed = 0;
  train->add_option("config", config)->required();
  train->add_option("--name", name_override, "Override the run name");
  train->add_option("--epochs", epochs_override, "Override the epoch count");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--jobs", g.jobs, "Parallel folds")->check(CLI::PositiveNumber);

  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset with saved weights");
  evaluate->add_option("weights", weights)->required();
  evaluate->add_option("dataset", dataset)->required();
  evaluate->add_option("--out", out, "Write the per-video CSV here");

  auto* table = app.add_subcommand("shuffle-table", "Levenshtein similarity of each shuffle strategy");
  SimilarityTableOptions sim;
  std::string level = "shot";
  table->add_option("dataset", dataset)->required();
  table->add_option("--iterations", sim.iterations)->check(CLI::PositiveNumber);
  table->add_option("--segments", sim.segments)->check(CLI::Range(2, 1 << 20));
  table->add_option("--window", sim.window)->check(CLI::Range(2, 1 << 20));
  table->add_option("--level", level)->check(CLI::IsMember({"shot", "frame"}));
  auto* table_seed_opt = table->add_option("--seed", sim.seed);

  auto* heat = app.add_subcommand("heatmap", "Cosine and ground-truth difference heatmaps for one video");
  std::size_t pixels = 4;
  heat->add_option("dataset", dataset)->required();
  heat->add_option("--video", video)->required();
  heat->add_option("--out", out, "Output directory");
  heat->add_option("--pixels", pixels, "Pixels per frame")->check(CLI::Range(1, 64));

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check of a scorer");
  std::size_t gc_frames = 8, gc_dim = 16;
  bool gc_full = false;
  std::uint64_t gc_seed = 0;
  grad->add_option("config", config)->required();
  grad->add_option("--frames", gc_frames)->check(CLI::Range(1, 512));
  grad->add_option("--dim", gc_dim, "Width cap for the check")->check(CLI::Range(2, 4096));
  grad->add_flag("--full-size", gc_full, "Check at the configured widths");
  auto* gc_seed_opt = grad->add_option("--seed", gc_seed);

  auto* synth = app.add_subcommand("synth", "Write a planted-structure synthetic dataset");
  SynthOptions synth_opt;
  std::uint64_t synth_seed = 0;
  synth->add_option("kind", kind, "content | position")->required();
  synth->add_option("--out", out)->required();
  synth->add_option("--videos", synth_opt.videos)->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_opt.frames)->check(CLI::Range(2, 100000));
  synth->add_option("--dim", synth_opt.dim)->check(CLI::PositiveNumber);
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed);

  auto* compare = app.add_subcommand("compare", "Comparison table from run reports");
  std::vector<std::string> reports;
  std::string csv;
  compare->add_option("reports", reports, "report.json files or run directories")->required();
  compare->add_option("--csv", csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (*seed_opt) g.seed = seed_value;
  auto local_seed = [&](CLI::Option* opt, std::uint64_t v) {
    if (*opt) g.seed = v;
  };

  try {
    if (*validate) return cmd_validate(dataset);
    if (*splits) {
      local_seed(split_seed_opt, split_seed);
      return cmd_splits(dataset, seed_or(g, 0), perms, folds, out);
    }
    if (*train) {
      local_seed(train_seed_opt, train_seed);
      return cmd_train(config, g, name_override, epochs_override);
    }
    if (*evaluate) return cmd_evaluate(weights, dataset, out);
    if (*table) {
      local_seed(table_seed_opt, sim.seed);
      sim.seed = seed_or(g, 0);
      sim.level = level == "frame" ? SimilarityLevel::frame : SimilarityLevel::shot;
      return cmd_shuffle_table(dataset, sim);
    }
    if (*heat) return cmd_heatmap(dataset, video, out, pixels);
    if (*grad) {
      local_seed(gc_seed_opt, gc_seed);
      return cmd_gradcheck(config, g, gc_frames, gc_dim, gc_full);
    }
    if (*synth) {
      local_seed(synth_seed_opt, synth_seed);
      return cmd_synth(kind, out, g, synth_opt);
    }
    if (*compare) return cmd_compare(reports, csv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  std::cerr << app.help();
  return kUsage;
}
