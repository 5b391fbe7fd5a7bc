#pragma once

#include <optional>

#include "synthfed/embedding.hpp"
#include "synthfed/image.hpp"

namespace synthfed {

/// 2|A∩B| / (|A|+|B|) for label `class_id`. Both empty gives 1.
double dice(const SegMask& a, const SegMask& b, int class_id);

/// 95th percentile (nearest rank) of the pooled directed boundary distances
/// A->B and B->A, in millimetres. Boundary pixels are foreground pixels with
/// a background 4-neighbour or touching the image edge. Returns nullopt when
/// exactly one mask is empty and 0 when both are.
std::optional<double> hd95(const SegMask& a, const SegMask& b, int class_id, Spacing spacing = {});

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}) between Gaussian fits
/// (sample covariance) of two embedding sets.
double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b);

}  // namespace synthfed
