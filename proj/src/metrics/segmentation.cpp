#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "synthfed/error.hpp"
#include "synthfed/memfilter.hpp"
#include "synthfed/metrics.hpp"

namespace synthfed {
namespace {

void require_same_shape(const SegMask& a, const SegMask& b) {
  if (a.extent() != b.extent())
    throw DataError("metric: shape mismatch " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                    std::to_string(b.height()) + "x" + std::to_string(b.width()));
}

struct Pixel {
  int row;
  int col;
};

std::vector<Pixel> boundary(const SegMask& m, int class_id) {
  std::vector<Pixel> out;
  const auto label = static_cast<std::uint8_t>(class_id);
  auto is_fg = [&](int r, int c) { return m.at(r, c) == label; };
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!is_fg(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == m.height() - 1 || c == m.width() - 1;
      if (edge || !is_fg(r - 1, c) || !is_fg(r + 1, c) || !is_fg(r, c - 1) || !is_fg(r, c + 1)) out.push_back({r, c});
    }
  }
  return out;
}

void directed(const std::vector<Pixel>& from, const std::vector<Pixel>& to, Spacing s, std::vector<double>& out) {
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dy = (p.row - q.row) * s.row_mm;
      const double dx = (p.col - q.col) * s.col_mm;
      best = std::min(best, dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
}

}  // namespace

double dice(const SegMask& a, const SegMask& b, int class_id) {
  require_same_shape(a, b);
  const auto label = static_cast<std::uint8_t>(class_id);
  std::size_t na = 0, nb = 0, both = 0;
  const auto la = a.labels();
  const auto lb = b.labels();
  for (std::size_t i = 0; i < la.size(); ++i) {
    const bool in_a = la[i] == label;
    const bool in_b = lb[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::optional<double> hd95(const SegMask& a, const SegMask& b, int class_id, Spacing spacing) {
  require_same_shape(a, b);
  const auto ba = boundary(a, class_id);
  const auto bb = boundary(b, class_id);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::nullopt;
  std::vector<double> pooled;
  pooled.reserve(ba.size() + bb.size());
  directed(ba, bb, spacing, pooled);
  directed(bb, ba, spacing, pooled);
  std::sort(pooled.begin(), pooled.end());
  return nearest_rank_percentile(pooled, 95.0);
}

}  // namespace synthfed
