#pragma once

// Independent reference computations used to check the library. They share
// no code with it and favour the most literal formulation over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "synthfed/image.hpp"

namespace oracle {

struct Nearest {
  std::size_t index = 0;
  double distance = 0.0;
};

// Plain double-precision loops over every (query, base) pair.
inline std::vector<Nearest> brute_nn(const std::vector<std::vector<float>>& queries,
                                     const std::vector<std::vector<float>>& base) {
  std::vector<Nearest> out;
  for (const auto& q : queries) {
    Nearest best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < base.size(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < q.size(); ++k) {
        const long double d = static_cast<long double>(q[k]) - static_cast<long double>(base[j][k]);
        s += d * d;
      }
      const double dist = static_cast<double>(std::sqrt(s));
      if (dist < best.distance) best = {j, dist};
    }
    out.push_back(best);
  }
  return out;
}

// P(W+ >= observed) under the sign-flip null, by listing all 2^n sign
// assignments of the average ranks.
inline double wilcoxon_enumeration_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    // average rank = (#smaller) + (#equal + 1) / 2
    double smaller = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::fabs(d[j]) < std::fabs(d[i]))
        smaller += 1.0;
      else if (std::fabs(d[j]) == std::fabs(d[i]))
        equal += 1.0;
    }
    rank[i] = smaller + (equal + 1.0) / 2.0;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) observed += rank[i];
  std::uint64_t hits = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) w += rank[i];
    if (w >= observed - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double dice(const synthfed::SegMask& a, const synthfed::SegMask& b, int label) {
  double in_a = 0, in_b = 0, both = 0;
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c) {
      const bool pa = a.at(r, c) == label;
      const bool pb = b.at(r, c) == label;
      in_a += pa;
      in_b += pb;
      both += pa && pb;
    }
  if (in_a + in_b == 0) return 1.0;
  return 2.0 * both / (in_a + in_b);
}

// Boundary via a background-padded copy: a foreground pixel is on the
// boundary iff one of its four neighbours in the padded grid is not
// foreground.
inline std::vector<std::pair<int, int>> boundary(const synthfed::SegMask& m, int label) {
  const int h = m.height() + 2, w = m.width() + 2;
  std::vector<int> padded(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c) padded[(r + 1) * w + c + 1] = m.at(r, c) == label;
  std::vector<std::pair<int, int>> out;
  for (int r = 1; r < h - 1; ++r)
    for (int c = 1; c < w - 1; ++c) {
      if (!padded[r * w + c]) continue;
      const int n = padded[(r - 1) * w + c] + padded[(r + 1) * w + c] + padded[r * w + c - 1] + padded[r * w + c + 1];
      if (n < 4) out.emplace_back(r - 1, c - 1);
    }
  return out;
}

inline std::optional<double> hd95(const synthfed::SegMask& a, const synthfed::SegMask& b, int label,
                                  synthfed::Spacing s) {
  const auto ba = boundary(a, label), bb = boundary(b, label);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::nullopt;
  std::vector<double> pooled;
  auto one_way = [&](const auto& from, const auto& to) {
    for (auto [r, c] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [r2, c2] : to) best = std::min(best, std::hypot((r - r2) * s.row_mm, (c - c2) * s.col_mm));
      pooled.push_back(best);
    }
  };
  one_way(ba, bb);
  one_way(bb, ba);
  std::sort(pooled.begin(), pooled.end());
  const std::size_t rank = (95 * pooled.size() + 99) / 100;  // ceil(0.95 n), 1-based
  return pooled[std::max<std::size_t>(rank, 1) - 1];
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace oracle
