#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tprobe/eval.hpp"

namespace oracle {

using tprobe::Correlation;

// tau-b by pair counting over all N(N-1)/2 pairs
inline Correlation tau_b_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  std::int64_t c = 0, d = 0, tie_x_only = 0, tie_y_only = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tie_x_only;
      else if (dy == 0) ++tie_y_only;
      else if ((dx > 0) == (dy > 0)) ++c;
      else ++d;
    }
  const std::int64_t nx = c + d + tie_y_only, ny = c + d + tie_x_only;
  if (nx == 0 || ny == 0) return {0.0, true};
  const double t = static_cast<double>(c - d) / std::sqrt(static_cast<double>(nx) * static_cast<double>(ny));
  return {std::clamp(t, -1.0, 1.0), false};
}

// doubled mid-rank of x[i]: 2·#less + #equal + 1
inline std::vector<std::int64_t> ranks_oracle(const std::vector<double>& x) {
  std::vector<std::int64_t> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::int64_t less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 2 * less + equal + 1;
  }
  return r;
}

inline Correlation spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const auto a = ranks_oracle(x), b = ranks_oracle(y);
  __int128 n = static_cast<__int128>(a.size()), sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += static_cast<__int128>(a[i]) * b[i];
    saa += static_cast<__int128>(a[i]) * a[i];
    sbb += static_cast<__int128>(b[i]) * b[i];
  }
  const __int128 cov = n * sab - sa * sb, va = n * saa - sa * sa, vb = n * sbb - sb * sb;
  if (va == 0 || vb == 0) return {0.0, true};
  const double r = static_cast<double>(cov) / std::sqrt(static_cast<double>(va) * static_cast<double>(vb));
  return {std::clamp(r, -1.0, 1.0), false};
}

}  // namespace oracle
