// Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on
// any FAIL. The real-data criterion runs only when TPROBE_TVSUM_DIR names
// a converted TVSum dataset directory.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "tprobe/tprobe.hpp"

using namespace tprobe;
namespace fs = std::filesystem;

namespace {

// tolerances
constexpr double kGradTolerance = 1e-4;
constexpr double kPlantedFloor = 0.3;
constexpr double kGradSeconds = 30.0;
constexpr double kRankSeconds = 60.0;
constexpr double kEquivarianceTolerance = 1e-5;
constexpr double kContentFloor = 0.8;
constexpr double kPositionNoPeCeiling = 0.15;
constexpr double kPositionPeFloor = 0.5;
constexpr double kExperimentSeconds = 600.0;
constexpr double kTvsumMlp = 0.171, kTvsumAttention = 0.180, kTvsumBand = 0.03;
constexpr double kFlipSimilarity = 0.15, kFlipBand = 0.5;
constexpr double kWholeShotSimilarity = 6.43, kWholeShotBand = 2.0;

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / "tprobe_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + TPROBE_CLI_PATH + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ScorerConfig small_scorer(ScorerKind kind, bool pe) {
  ScorerConfig c;
  c.kind = kind;
  c.input_dim = 16;
  c.attention_dim = 16;
  c.ffn_dim = 16;
  c.hidden_dims = {16, 8};
  c.heads = 2;
  c.local_heads = 2;
  c.global_heads = 4;
  c.segments = 3;
  c.use_positional_encoding = pe;
  return c;
}

Tensor<float> random_features(std::size_t n, std::size_t d, Rng& rng) {
  Tensor<float> x(n, d);
  for (auto& v : x.values()) v = static_cast<float>(2.0 * uniform01(rng) - 1.0);
  return x;
}

std::vector<int> random_shots(Rng& rng, std::size_t n) {
  std::vector<int> ids(n);
  int id = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (uniform01(rng) < 0.25) ++id;
    ids[i] = id;
  }
  return ids;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t instances = 0;
  for (auto kind : {ScorerKind::mlp, ScorerKind::attention, ScorerKind::segmented_attention})
    for (bool pe : {false, true}) {
      if (kind == ScorerKind::mlp && pe) continue;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ScorerCheckOptions opt;
        opt.frames = 2 + seed % 7;
        const auto r = check_scorer_gradients(small_scorer(kind, pe), 1000 + seed, opt);
        worst = std::max(worst, r.max_error());
        ++instances;
      }
    }
  double planted = 1.0;
  for (auto kind : {ScorerKind::mlp, ScorerKind::attention, ScorerKind::segmented_attention}) {
    ScorerCheckOptions opt;
    opt.corrupt_factor = 2.0;
    opt.loss_scale = 100.0;
    planted = std::min(planted, check_scorer_gradients(small_scorer(kind, false), 11, opt).max_error());
  }
  const double secs = seconds_since(start);
  return verdict(worst < kGradTolerance && planted > kPlantedFloor && secs < kGradSeconds,
                 std::to_string(instances) + " instances, max rel error " + fmt("%.2e", worst) +
                     "; planted x2 min error " + fmt("%.3f", planted) + "; " + fmt("%.1f s", secs));
}

Outcome rank_oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng = make_rng(2024);
  std::size_t mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 199);
    std::vector<double> x(n), y(n);
    const int lx = 1 + static_cast<int>(uniform_index(rng, 12)), ly = 1 + static_cast<int>(uniform_index(rng, 12));
    for (auto& v : x) v = static_cast<double>(uniform_index(rng, static_cast<std::size_t>(lx)));
    for (auto& v : y) v = static_cast<double>(uniform_index(rng, static_cast<std::size_t>(ly)));
    const auto k = kendall_tau(x, y), ko = oracle::tau_b_oracle(x, y);
    const auto s = spearman_rho(x, y), so = oracle::spearman_oracle(x, y);
    if (k.value != ko.value || k.degenerate != ko.degenerate || s.value != so.value || s.degenerate != so.degenerate)
      ++mismatches;
  }
  const double secs = seconds_since(start);
  return verdict(mismatches == 0 && secs < kRankSeconds,
                 "500 tied vectors, N<=200, " + std::to_string(mismatches) + " mismatches; " + fmt("%.1f s", secs));
}

// true when the mapping satisfies the structural invariant of its strategy
bool structure_holds(const ShuffleSpec& spec, const std::vector<std::size_t>& m, const std::vector<int>& ids) {
  const std::size_t n = m.size();
  if (!is_bijection(m)) return false;
  const auto ranges = shot_ranges(ids);
  switch (spec.strategy) {
    case ShuffleStrategy::identity:
      return Permutation{m}.is_identity();
    case ShuffleStrategy::flip:
      for (std::size_t i = 0; i < n; ++i)
        if (m[i] != n - 1 - i) return false;
      return true;
    case ShuffleStrategy::fixed_segment: {
      // the output is the M contiguous input blocks in some order
      std::vector<std::pair<std::size_t, std::size_t>> blocks;
      for (std::size_t b = 0; b < spec.segments; ++b)
        blocks.emplace_back(b * (n / spec.segments), b + 1 == spec.segments ? n : (b + 1) * (n / spec.segments));
      std::size_t pos = 0;
      std::vector<bool> used(blocks.size(), false);
      while (pos < n) {
        bool found = false;
        for (std::size_t b = 0; b < blocks.size() && !found; ++b) {
          if (used[b] || m[pos] != blocks[b].first) continue;
          for (std::size_t k = blocks[b].first; k < blocks[b].second; ++k)
            if (pos + (k - blocks[b].first) >= n || m[pos + (k - blocks[b].first)] != k) return false;
          pos += blocks[b].second - blocks[b].first;
          used[b] = found = true;
        }
        if (!found) return false;
      }
      return true;
    }
    case ShuffleStrategy::intra_shot:
      for (std::size_t i = 0; i < n; ++i)
        if (ids[m[i]] != ids[i]) return false;
      return true;
    case ShuffleStrategy::neighbour_shot:
    case ShuffleStrategy::any_shot: {
      std::size_t pos = 0, k = 0;
      while (pos < n) {
        const auto shot = static_cast<std::size_t>(ids[m[pos]]);
        if (spec.strategy == ShuffleStrategy::neighbour_shot && shot / spec.window != k / spec.window) return false;
        for (std::size_t f = ranges[shot].first; f < ranges[shot].second; ++f, ++pos)
          if (pos >= n || m[pos] != f) return false;
        ++k;
      }
      return k == ranges.size();
    }
  }
  return false;
}

Outcome permutation_properties() {
  Rng rng = make_rng(77);
  std::size_t violations = 0, intra_not_100 = 0, cases = 0;
  for (auto strategy : {ShuffleStrategy::flip, ShuffleStrategy::fixed_segment, ShuffleStrategy::intra_shot,
                        ShuffleStrategy::neighbour_shot, ShuffleStrategy::any_shot})
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 4 + uniform_index(rng, 120);
      const auto ids = random_shots(rng, n);
      ShuffleSpec spec;
      spec.strategy = strategy;
      spec.segments = 2 + uniform_index(rng, 3);
      spec.window = 2 + uniform_index(rng, 3);
      spec.seed = rng();
      const auto perm = generate_permutation(spec, n, ids);
      ++cases;
      if (!structure_holds(spec, perm.mapping, ids)) ++violations;
      if (strategy == ShuffleStrategy::intra_shot && shuffle_dissimilarity(perm, ids) != 100.0) ++intra_not_100;
    }
  return verdict(violations == 0 && intra_not_100 == 0,
                 std::to_string(cases) + " cases, " + std::to_string(violations) +
                     " invariant violations, intra-shot similarity != 100.0 in " + std::to_string(intra_not_100));
}

Outcome synthetic_experiments() {
  const fs::path src = TPROBE_SOURCE_DIR;
  const auto content = work_dir() / "synth_content", position = work_dir() / "synth_position";
  if (run_cli("synth content --out '" + content.string() + "'") != 0 ||
      run_cli("synth position --out '" + position.string() + "'") != 0)
    return {Verdict::fail, "tprobe synth failed"};

  struct Run {
    const char* config;
    fs::path data;
    std::function<bool(double)> ok;
    const char* target;
  };
  const Run runs[] = {
      {"synth_content_mlp.json", content, [](double k) { return k >= kContentFloor; }, ">= 0.8"},
      {"synth_position_attention_nope.json", position, [](double k) { return std::abs(k) < kPositionNoPeCeiling; },
       "|k| < 0.15"},
      {"synth_position_attention_pe.json", position, [](double k) { return k >= kPositionPeFloor; }, ">= 0.5"},
  };
  bool all = true;
  std::string detail;
  for (const auto& r : runs) {
    auto cfg = load_experiment_config(src / "configs" / r.config);
    cfg.dataset = r.data.string();
    const auto ds = load_dataset(cfg.dataset);
    const auto start = std::chrono::steady_clock::now();
    const auto report = run_experiment(cfg, ds);
    const double secs = seconds_since(start);
    const bool ok = r.ok(report.aggregate_kendall) && secs < kExperimentSeconds && report.folds.size() == 15;
    all = all && ok;
    if (!detail.empty()) detail += "; ";
    detail += cfg.model.label() + " " + fmt("%.3f", report.aggregate_kendall) + " (" + r.target + ", " +
              fmt("%.0f s", secs) + ")";
  }
  return verdict(all, detail);
}

Outcome permutation_equivariance() {
  Rng rng = make_rng(31);
  double worst = 0.0;
  std::size_t mlp_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const auto nope = build_model(small_scorer(ScorerKind::attention, false), static_cast<std::uint64_t>(t));
    const auto mlp = build_model(small_scorer(ScorerKind::mlp, false), static_cast<std::uint64_t>(t));
    const std::size_t n = 2 + uniform_index(rng, 40);
    const auto x = random_features(n, 16, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<float> px(n, 16);
    for (std::size_t i = 0; i < n; ++i) std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
    const auto a = nope.score(x), b = nope.score(px);
    const auto ma = mlp.score(x), mb = mlp.score(px);
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(b[i] - a[perm[i]])));
      if (mb[i] != ma[perm[i]]) ++mlp_mismatch;
    }
  }
  return verdict(worst < kEquivarianceTolerance && mlp_mismatch == 0,
                 "100 instances, attention(-PE) max deviation " + fmt("%.2e", worst) + ", mlp mismatches " +
                     std::to_string(mlp_mismatch));
}

Outcome protocol_identities() {
  SynthOptions o;
  o.videos = 12;
  o.frames = 24;
  o.dim = 16;
  o.seed = 5;
  const auto ds = make_synthetic_dataset(SynthKind::position_only, o);
  const auto before = ds.videos;
  const auto plan = generate_splits(ds, 3, 1, 3);
  ExperimentConfig base;
  base.model = small_scorer(ScorerKind::segmented_attention, true);
  base.paradigm = Paradigm::full_video;
  base.epochs = 3;
  base.lr = 1e-3;

  std::size_t aug_diffs = 0, eval_diffs = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    base.seed = seed;
    auto aug = base;
    aug.augmentation = AugmentationSpec{0.0, 4, 99};
    std::vector<Tensor<float>> wp, wa;
    const auto p = run_fold(base, ds, plan.assignments[0][seed], 0, seed, &wp);
    const auto a = run_fold(aug, ds, plan.assignments[0][seed], 0, seed, &wa);
    if (wp != wa || p.epoch_loss != a.epoch_loss || p.epoch_kendall != a.epoch_kendall) ++aug_diffs;

    // the test videos reach evaluation unshuffled, whatever the training shuffle
    for (auto strategy : {ShuffleStrategy::flip, ShuffleStrategy::any_shot}) {
      auto shuffled = base;
      shuffled.shuffle = ShuffleSpec{};
      shuffled.shuffle->strategy = strategy;
      std::vector<Tensor<float>> w;
      const auto r = run_fold(shuffled, ds, plan.assignments[0][seed], 0, seed, &w);
      auto m = build_model(base.model, 0);
      restore_weights(m, w);
      std::vector<const VideoRecord*> test;
      for (const auto& id : plan.assignments[0][seed].test) test.push_back(&ds.video(id));
      const auto again = evaluate_videos(m, test, ds.style);
      for (std::size_t i = 0; i < again.size(); ++i)
        if (again[i].kendall != r.videos[i].kendall || again[i].spearman != r.videos[i].spearman) ++eval_diffs;
    }
  }
  const bool untouched = ds.videos == before;
  return verdict(aug_diffs == 0 && eval_diffs == 0 && untouched,
                 "p=0 augmentation differs from unshuffled in " + std::to_string(aug_diffs) +
                     "/3 seeds; eval mismatches " + std::to_string(eval_diffs) + "; dataset " +
                     (untouched ? "unmodified" : "MODIFIED"));
}

Outcome real_data() {
  const char* dir = std::getenv("TPROBE_TVSUM_DIR");
  if (!dir || !*dir) return {Verdict::skip, "set TPROBE_TVSUM_DIR to a converted TVSum dataset"};
  const fs::path src = TPROBE_SOURCE_DIR;
  const auto ds = load_dataset(dir);
  auto run = [&](const char* name) {
    auto cfg = load_experiment_config(src / "configs" / "tvsum" / name);
    cfg.dataset = dir;
    RunOptions opt;
    opt.jobs = std::max(1u, std::thread::hardware_concurrency());
    return run_experiment(cfg, ds, opt).aggregate_kendall;
  };
  const double mlp = run("mlp_invariant.json");
  const double attention = run("attention_invariant.json");
  const double unshuffled = run("segmented_unshuffled.json");
  const double fixed = run("segmented_fixed_segment.json");
  const double any = run("segmented_any_shot.json");
  const auto table = shuffle_similarity_table(ds);
  const double flip = table[0].similarity, whole = table[4].similarity;
  const bool ok = std::abs(mlp - kTvsumMlp) <= kTvsumBand && std::abs(attention - kTvsumAttention) <= kTvsumBand &&
                  fixed >= unshuffled && any >= unshuffled && std::abs(flip - kFlipSimilarity) <= kFlipBand &&
                  std::abs(whole - kWholeShotSimilarity) <= kWholeShotBand;
  return verdict(ok, "mlp " + fmt("%.3f", mlp) + ", attention(-PE) " + fmt("%.3f", attention) + ", segmented " +
                         fmt("unshuffled %.3f", unshuffled) + fmt(" fixed %.3f", fixed) + fmt(" any %.3f", any) +
                         fmt("; flip similarity %.2f", flip) + fmt(", whole-shot %.2f", whole));
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"gradient-correctness", gradient_correctness},
      {"rank-oracle-equivalence", rank_oracle_equivalence},
      {"permutation-properties", permutation_properties},
      {"synthetic-planted-structure", synthetic_experiments},
      {"permutation-equivariance", permutation_equivariance},
      {"protocol-identities", protocol_identities},
      {"tvsum-reference-numbers", real_data},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::skip ? "SKIP" : "FAIL";
    if (o.verdict == Verdict::fail) ++failures;
    std::cout << tag << "  " << name << "  " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
