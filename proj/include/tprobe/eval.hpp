#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tprobe/dataset.hpp"

namespace tprobe {

/// A correlation value; `degenerate` marks a zero-variance input, for
/// which the value is reported as 0 instead of NaN.
struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

namespace detail {

// Counts strict inversions of v[lo, hi) while merge-sorting it.
inline std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                     std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// Σ t(t−1)/2 over runs of equal values in sorted input.
inline std::int64_t tied_pairs(std::span<const double> sorted) {
  std::int64_t total = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

template <typename X, typename Y>
void check_pair(std::span<const X> x, std::span<const Y> y, const char* what) {
  if (x.size() != y.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()));
  if (x.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 values");
  auto finite = [](auto v) { return std::isfinite(static_cast<double>(v)); };
  if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite))
    throw std::invalid_argument(std::string(what) + ": non-finite value");
}

}  // namespace detail

/// Kendall tau-b, (C−D)/sqrt((n0−n1)(n0−n2)), from exact pair counts in
/// O(N log N).
template <typename X, typename Y>
Correlation kendall_tau(std::span<const X> x, std::span<const Y> y) {
  detail::check_pair(x, y, "kendall_tau");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = static_cast<double>(x[order[i]]);
    ys[i] = static_cast<double>(y[order[i]]);
  }
  const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t n1 = detail::tied_pairs(xs);
  std::int64_t n3 = 0;  // pairs tied in both
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    n3 += t * (t - 1) / 2;
    i = j;
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = detail::count_inversions(ys, buf, 0, n);
  const std::int64_t n2 = detail::tied_pairs(ys);  // ys is sorted now
  const std::int64_t numerator = n0 - n1 - n2 + n3 - 2 * swaps;
  const std::int64_t dx = n0 - n1, dy = n0 - n2;
  if (dx == 0 || dy == 0) return {0.0, true};
  const double tau = static_cast<double>(numerator) / std::sqrt(static_cast<double>(dx) * static_cast<double>(dy));
  return {std::clamp(tau, -1.0, 1.0), false};
}

/// Mid-ranks doubled, so every rank is an integer: equal values share
/// (2·first + t + 1) for a run of t starting at sorted position `first`.
template <typename X>
std::vector<std::int64_t> doubled_midranks(std::span<const X> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<std::int64_t> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const auto r = static_cast<std::int64_t>(2 * i + (j - i) + 1);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

/// Pearson correlation of integer vectors with exact integer moments.
inline Correlation pearson_exact(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  const auto n = static_cast<__int128>(a.size());
  __int128 sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += static_cast<__int128>(a[i]) * a[i];
    sbb += static_cast<__int128>(b[i]) * b[i];
    sab += static_cast<__int128>(a[i]) * b[i];
  }
  const __int128 cov = n * sab - sa * sb;
  const __int128 va = n * saa - sa * sa;
  const __int128 vb = n * sbb - sb * sb;
  if (va == 0 || vb == 0) return {0.0, true};
  const double rho = static_cast<double>(cov) / std::sqrt(static_cast<double>(va) * static_cast<double>(vb));
  return {std::clamp(rho, -1.0, 1.0), false};
}

/// Spearman rho: Pearson correlation of mid-ranks.
template <typename X, typename Y>
Correlation spearman_rho(std::span<const X> x, std::span<const Y> y) {
  detail::check_pair(x, y, "spearman_rho");
  const auto rx = doubled_midranks(x);
  const auto ry = doubled_midranks(y);
  return pearson_exact(rx, ry);
}

template <typename X, typename Y>
Correlation kendall_tau(const std::vector<X>& x, const std::vector<Y>& y) {
  return kendall_tau(std::span<const X>(x), std::span<const Y>(y));
}
template <typename X, typename Y>
Correlation spearman_rho(const std::vector<X>& x, const std::vector<Y>& y) {
  return spearman_rho(std::span<const X>(x), std::span<const Y>(y));
}

struct VideoEvalResult {
  std::string video_id;
  double kendall = 0.0;
  double spearman = 0.0;
  bool degenerate = false;
};

/// tvsum_style: correlation averaged over each annotator's scores;
/// summe_style: correlation with the per-frame annotator mean.
template <typename P>
VideoEvalResult evaluate_video(std::span<const P> pred, const VideoRecord& record, DatasetStyle style) {
  const std::size_t n = record.frames();
  if (pred.size() != n)
    throw std::invalid_argument("evaluate_video: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(n) + " frames of '" + record.id + "'");
  const std::size_t a = record.annotators();
  if (a == 0) throw DataError(record.id, "annotator_scores", "no annotators");
  VideoEvalResult out{record.id, 0.0, 0.0, false};
  if (style == DatasetStyle::tvsum_style) {
    for (std::size_t r = 0; r < a; ++r) {
      const auto row = record.annotator_scores.row(r);
      const auto k = kendall_tau(pred, row);
      const auto s = spearman_rho(pred, row);
      out.kendall += k.value;
      out.spearman += s.value;
      out.degenerate = out.degenerate || k.degenerate || s.degenerate;
    }
    out.kendall /= static_cast<double>(a);
    out.spearman /= static_cast<double>(a);
  } else {
    std::vector<double> mean(n, 0.0);
    for (std::size_t r = 0; r < a; ++r)
      for (std::size_t j = 0; j < n; ++j) mean[j] += record.annotator_scores(r, j);
    for (auto& m : mean) m /= static_cast<double>(a);
    const auto k = kendall_tau(pred, std::span<const double>(mean));
    const auto s = spearman_rho(pred, std::span<const double>(mean));
    out.kendall = k.value;
    out.spearman = s.value;
    out.degenerate = k.degenerate || s.degenerate;
  }
  return out;
}

template <typename P>
VideoEvalResult evaluate_video(const std::vector<P>& pred, const VideoRecord& record, DatasetStyle style) {
  return evaluate_video(std::span<const P>(pred), record, style);
}

/// Fraction of videos whose Kendall correlation reaches `threshold`.
inline double threshold_fraction(std::span<const VideoEvalResult> results, double threshold) {
  if (results.empty()) throw std::invalid_argument("threshold_fraction: no results");
  const auto hits = std::count_if(results.begin(), results.end(),
                                  [&](const VideoEvalResult& r) { return r.kendall >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

inline void write_results_csv(std::ostream& out, std::span<const VideoEvalResult> results) {
  out << "video_id,kendall,spearman,degenerate_flag\n";
  out << std::setprecision(17);
  for (const auto& r : results)
    out << r.video_id << ',' << r.kendall << ',' << r.spearman << ',' << (r.degenerate ? 1 : 0) << '\n';
}

inline std::vector<VideoEvalResult> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "video_id,kendall,spearman,degenerate_flag")
    throw DataError("", "csv", "missing results header");
  std::vector<VideoEvalResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    VideoEvalResult r;
    std::string k, s, f;
    if (!std::getline(ls, r.video_id, ',') || !std::getline(ls, k, ',') || !std::getline(ls, s, ',') ||
        !std::getline(ls, f))
      throw DataError("", "csv", "malformed row '" + line + "'");
    r.kendall = std::stod(k);
    r.spearman = std::stod(s);
    r.degenerate = f == "1";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tprobe
