#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "synthfed/error.hpp"
#include "synthfed/simd.hpp"

namespace synthfed::simd {
namespace {

bool cpu_has_avx2() {
#if defined(SYNTHFED_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* env = std::getenv("SYNTHFED_SIMD"); env != nullptr && std::string(env) == "scalar")
    return Backend::Scalar;
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("simd kernel: length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

Backend active_backend() { return current().load(std::memory_order_relaxed); }

bool backend_available(Backend b) { return b == Backend::Scalar || cpu_has_avx2(); }

void set_backend(Backend b) {
  if (!backend_available(b)) throw UsageError("simd backend unavailable: " + std::string(backend_name(b)));
  current().store(b, std::memory_order_relaxed);
}

std::string_view backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

#if defined(SYNTHFED_HAVE_AVX2)
#define SYNTHFED_DISPATCH(fn, ...) (active_backend() == Backend::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define SYNTHFED_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

double squared_distance(std::span<const float> a, std::span<const float> b) {
  check_sizes(a.size(), b.size());
  return SYNTHFED_DISPATCH(squared_distance, a.data(), b.data(), a.size());
}

double dot(std::span<const float> a, std::span<const float> b) {
  check_sizes(a.size(), b.size());
  return SYNTHFED_DISPATCH(dot, a.data(), b.data(), a.size());
}

void axpy(std::span<float> dst, std::span<const float> src, float weight) {
  check_sizes(dst.size(), src.size());
  SYNTHFED_DISPATCH(axpy, dst.data(), src.data(), dst.size(), weight);
}

#undef SYNTHFED_DISPATCH

}  // namespace synthfed::simd
