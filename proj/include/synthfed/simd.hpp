#pragma once

#include <span>
#include <string_view>

// Data-parallel inner loops. Every kernel has a scalar reference and, on x86,
// an AVX2 variant chosen once at runtime. The scalar kernels accumulate in the
// same eight-lane order as the vector ones, so both backends return
// bit-identical results.

namespace synthfed::simd {

enum class Backend { Scalar, Avx2 };

/// Backend used by the dispatching entry points below. Honors the
/// SYNTHFED_SIMD=scalar environment override.
Backend active_backend();
bool backend_available(Backend b);
/// Forces a backend (tests, benchmarks). Throws if unavailable.
void set_backend(Backend b);
std::string_view backend_name(Backend b);

/// Sum over i of (a[i] - b[i])^2, accumulated in double. Sizes must match.
double squared_distance(std::span<const float> a, std::span<const float> b);

/// Sum over i of a[i] * b[i], accumulated in double.
double dot(std::span<const float> a, std::span<const float> b);

/// dst[i] += weight * src[i] (float, no fused multiply-add).
void axpy(std::span<float> dst, std::span<const float> src, float weight);

namespace scalar {
double squared_distance(const float* a, const float* b, std::size_t n);
double dot(const float* a, const float* b, std::size_t n);
void axpy(float* dst, const float* src, std::size_t n, float weight);
}  // namespace scalar

namespace avx2 {
double squared_distance(const float* a, const float* b, std::size_t n);
double dot(const float* a, const float* b, std::size_t n);
void axpy(float* dst, const float* src, std::size_t n, float weight);
}  // namespace avx2

}  // namespace synthfed::simd
