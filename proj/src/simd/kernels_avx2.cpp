#include <immintrin.h>

#include "synthfed/simd.hpp"

namespace synthfed::simd::avx2 {
namespace {

// Same fold as the scalar kernels: lanes (j, j+4) first, then pairs.
double fold(__m256d lo, __m256d hi, std::size_t done, std::size_t n, const float* a, const float* b, bool square) {
  alignas(32) double acc[8];
  _mm256_store_pd(acc, lo);
  _mm256_store_pd(acc + 4, hi);
  for (std::size_t i = done; i < n; ++i) {
    if (square) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc[i % 8] += d * d;
    } else {
      acc[i % 8] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
  }
  const double t0 = acc[0] + acc[4];
  const double t1 = acc[1] + acc[5];
  const double t2 = acc[2] + acc[6];
  const double t3 = acc[3] + acc[7];
  return (t0 + t1) + (t2 + t3);
}

}  // namespace

double squared_distance(const float* a, const float* b, std::size_t n) {
  __m256d lo = _mm256_setzero_pd();
  __m256d hi = _mm256_setzero_pd();
  const std::size_t blocks = n / 8 * 8;
  for (std::size_t i = 0; i < blocks; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    const __m256d dlo =
        _mm256_sub_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)), _mm256_cvtps_pd(_mm256_castps256_ps128(vb)));
    const __m256d dhi =
        _mm256_sub_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)), _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1)));
    lo = _mm256_add_pd(lo, _mm256_mul_pd(dlo, dlo));
    hi = _mm256_add_pd(hi, _mm256_mul_pd(dhi, dhi));
  }
  return fold(lo, hi, blocks, n, a, b, true);
}

double dot(const float* a, const float* b, std::size_t n) {
  __m256d lo = _mm256_setzero_pd();
  __m256d hi = _mm256_setzero_pd();
  const std::size_t blocks = n / 8 * 8;
  for (std::size_t i = 0; i < blocks; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    lo = _mm256_add_pd(
        lo, _mm256_mul_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)), _mm256_cvtps_pd(_mm256_castps256_ps128(vb))));
    hi = _mm256_add_pd(hi, _mm256_mul_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)),
                                         _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1))));
  }
  return fold(lo, hi, blocks, n, a, b, false);
}

void axpy(float* dst, const float* src, std::size_t n, float weight) {
  const __m256 w = _mm256_set1_ps(weight);
  const std::size_t blocks = n / 8 * 8;
  for (std::size_t i = 0; i < blocks; i += 8) {
    const __m256 scaled = _mm256_mul_ps(w, _mm256_loadu_ps(src + i));
    _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), scaled));
  }
  for (std::size_t i = blocks; i < n; ++i) {
    const float scaled = weight * src[i];
    dst[i] = dst[i] + scaled;
  }
}

}  // namespace synthfed::simd::avx2
