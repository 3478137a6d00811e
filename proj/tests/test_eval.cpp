#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "tprobe/eval.hpp"
#include "tprobe/rng.hpp"
#include "oracles.hpp"

using namespace tprobe;
using namespace oracle;
using Catch::Matchers::WithinAbs;

namespace {

// textbook Pearson on averaged ranks, floating point
double spearman_textbook(const std::vector<double>& x, const std::vector<double>& y) {
  auto half = [](const std::vector<std::int64_t>& r) {
    std::vector<double> out(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i] / 2.0;
    return out;
  };
  const auto a = half(ranks_oracle(x)), b = half(ranks_oracle(y));
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

std::vector<double> tied_vector(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::floor(uniform01(rng) * levels);
  return v;
}

VideoRecord record_with(std::vector<std::vector<double>> annotators, DatasetStyle style) {
  const std::size_t n = annotators[0].size();
  Tensor<double> scores(annotators.size(), n);
  for (std::size_t r = 0; r < annotators.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) scores(r, j) = annotators[r][j];
  return make_record("v", Tensor<float>(n, 2), scores, {{0, static_cast<std::int64_t>(n) - 1}}, style, 1);
}

}  // namespace

TEST_CASE("kendall tau-b worked examples") {
  CHECK_THAT(kendall_tau(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}).value,
             WithinAbs(4.0 / 6.0, 1e-15));
  CHECK(kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}).value == 1.0);
  CHECK(kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}).value == -1.0);
  // x=[1,1,2], y=[1,2,3]: C=2, D=0, one pair tied in x
  CHECK_THAT(kendall_tau(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}).value,
             WithinAbs(2.0 / std::sqrt(2.0 * 3.0), 1e-15));
}

TEST_CASE("spearman worked examples") {
  CHECK_THAT(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}).value, WithinAbs(0.5, 1e-15));
  CHECK(spearman_rho(std::vector<double>{5, 7, 9, 11}, std::vector<double>{0.1, 0.2, 0.3, 0.4}).value == 1.0);
  const std::vector<double> v{10, 20, 20, 30};
  const auto r = doubled_midranks(std::span<const double>(v));
  CHECK(r == std::vector<std::int64_t>{2, 5, 5, 8});
}

TEST_CASE("fast rank statistics equal the brute-force oracles exactly") {
  Rng rng = make_rng(2024);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 199);
    const int levels = 1 + static_cast<int>(uniform01(rng) * 12);
    const auto x = tied_vector(rng, n, levels);
    const auto y = tied_vector(rng, n, 1 + static_cast<int>(uniform01(rng) * 12));
    CAPTURE(t, n, levels);
    const auto k = kendall_tau(x, y), ko = tau_b_oracle(x, y);
    REQUIRE(k.value == ko.value);
    REQUIRE(k.degenerate == ko.degenerate);
    const auto s = spearman_rho(x, y), so = spearman_oracle(x, y);
    REQUIRE(s.value == so.value);
    REQUIRE(s.degenerate == so.degenerate);
    if (!s.degenerate) REQUIRE_THAT(s.value, WithinAbs(spearman_textbook(x, y), 1e-12));
  }
}

TEST_CASE("rank statistic properties") {
  Rng rng = make_rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 50);
    const auto x = tied_vector(rng, n, 6), y = tied_vector(rng, n, 6);
    const auto k = kendall_tau(x, y), s = spearman_rho(x, y);
    REQUIRE(k.value == kendall_tau(y, x).value);
    REQUIRE(s.value == spearman_rho(y, x).value);
    REQUIRE(k.value >= -1.0);
    REQUIRE(k.value <= 1.0);
    // strictly increasing transforms leave both unchanged
    std::vector<double> fx(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      fx[i] = std::exp(x[i]) * 3.0 + 1.0;
      neg[i] = -y[i];
    }
    REQUIRE(kendall_tau(fx, y).value == k.value);
    REQUIRE(spearman_rho(fx, y).value == s.value);
    REQUIRE(kendall_tau(x, neg).value == -k.value);
    REQUIRE(spearman_rho(x, neg).value == -s.value);
  }
}

TEST_CASE("degenerate and invalid inputs") {
  const std::vector<double> flat{2, 2, 2}, v{1, 2, 3};
  const auto k = kendall_tau(flat, v), s = spearman_rho(v, flat);
  CHECK(k.degenerate);
  CHECK(k.value == 0.0);
  CHECK(s.degenerate);
  CHECK(s.value == 0.0);
  CHECK_THROWS_AS(kendall_tau(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  CHECK_THROWS_AS(spearman_rho(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(kendall_tau(std::vector<double>{1, NAN}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST_CASE("evaluate_video per style") {
  const std::vector<double> a1{1, 2, 3, 4, 5}, a2{5, 3, 4, 1, 2};
  const std::vector<float> pred{0.1f, 0.2f, 0.3f, 0.4f, 0.5f};

  SECTION("tvsum style averages per-annotator correlations") {
    const auto rec = record_with({a1, a2}, DatasetStyle::tvsum_style);
    const auto r = evaluate_video(pred, rec, DatasetStyle::tvsum_style);
    const std::vector<double> p(pred.begin(), pred.end());
    CHECK_THAT(r.kendall, WithinAbs((1.0 + tau_b_oracle(p, a2).value) / 2.0, 1e-15));
    CHECK_THAT(r.spearman, WithinAbs((1.0 + spearman_oracle(p, a2).value) / 2.0, 1e-15));
    CHECK(r.video_id == "v");
    CHECK_FALSE(r.degenerate);
    const auto swapped = evaluate_video(pred, record_with({a2, a1}, DatasetStyle::tvsum_style),
                                        DatasetStyle::tvsum_style);
    CHECK_THAT(swapped.kendall, WithinAbs(r.kendall, 1e-15));
  }
  SECTION("summe style correlates with the annotator mean") {
    std::vector<double> b1{0, 0.2, 0.4, 0.6, 1.0}, b2{1.0, 0.6, 0.8, 0.0, 0.2};
    const auto rec = record_with({b1, b2}, DatasetStyle::summe_style);
    const auto r = evaluate_video(pred, rec, DatasetStyle::summe_style);
    std::vector<double> mean(5), p(pred.begin(), pred.end());
    for (std::size_t j = 0; j < 5; ++j) mean[j] = (b1[j] + b2[j]) / 2.0;
    CHECK(r.kendall == tau_b_oracle(p, mean).value);
    CHECK(r.spearman == spearman_oracle(p, mean).value);
  }
  SECTION("a single annotator gives the plain correlation") {
    const auto rec = record_with({a2}, DatasetStyle::tvsum_style);
    const std::vector<double> p(pred.begin(), pred.end());
    CHECK(evaluate_video(pred, rec, DatasetStyle::tvsum_style).kendall == tau_b_oracle(p, a2).value);
  }
  SECTION("constant predictions are flagged") {
    const auto rec = record_with({a1, a2}, DatasetStyle::tvsum_style);
    const auto r = evaluate_video(std::vector<float>(5, 0.5f), rec, DatasetStyle::tvsum_style);
    CHECK(r.degenerate);
    CHECK(r.kendall == 0.0);
  }
  SECTION("length mismatch throws") {
    const auto rec = record_with({a1}, DatasetStyle::tvsum_style);
    CHECK_THROWS_AS(evaluate_video(std::vector<float>(4, 0.1f), rec, DatasetStyle::tvsum_style),
                    std::invalid_argument);
  }
}

TEST_CASE("threshold fraction") {
  std::vector<VideoEvalResult> rs(50);
  for (std::size_t i = 0; i < 50; ++i) rs[i].kendall = i < 26 ? 0.3 : 0.1;
  CHECK(threshold_fraction(rs, 0.2) == 0.52);
  rs.resize(25);
  for (std::size_t i = 0; i < 25; ++i) rs[i].kendall = i < 5 ? 0.2 : 0.19;
  CHECK(threshold_fraction(rs, 0.2) == 0.20);
  CHECK_THROWS(threshold_fraction(std::vector<VideoEvalResult>{}, 0.1));
}

TEST_CASE("results csv round trip") {
  const std::vector<VideoEvalResult> rs{{"a", 0.1 / 3.0, -0.25, false}, {"b", 0.0, 0.0, true}};
  std::stringstream ss;
  write_results_csv(ss, rs);
  CHECK(ss.str().starts_with("video_id,kendall,spearman,degenerate_flag\n"));
  const auto back = read_results_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "a");
  CHECK(back[0].kendall == rs[0].kendall);
  CHECK(back[1].degenerate);
  std::stringstream bad("id,k\n");
  CHECK_THROWS_AS(read_results_csv(bad), DataError);
}
