#include "synthfed/simd.hpp"

namespace synthfed::simd::scalar {
namespace {

// Lane j of an 8-wide accumulator receives elements i with i % 8 == j. The
// halves are then folded as (l0+l4 + l1+l5) + (l2+l6 + l3+l7), which is the
// reduction the AVX2 kernels perform.
double fold(const double (&acc)[8]) {
  const double t0 = acc[0] + acc[4];
  const double t1 = acc[1] + acc[5];
  const double t2 = acc[2] + acc[6];
  const double t3 = acc[3] + acc[7];
  return (t0 + t1) + (t2 + t3);
}

}  // namespace

double squared_distance(const float* a, const float* b, std::size_t n) {
  double acc[8] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc[i % 8] += d * d;
  }
  return fold(acc);
}

double dot(const float* a, const float* b, std::size_t n) {
  double acc[8] = {};
  for (std::size_t i = 0; i < n; ++i) acc[i % 8] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return fold(acc);
}

void axpy(float* dst, const float* src, std::size_t n, float weight) {
  for (std::size_t i = 0; i < n; ++i) {
    const float scaled = weight * src[i];
    dst[i] = dst[i] + scaled;
  }
}

}  // namespace synthfed::simd::scalar
