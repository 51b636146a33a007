#pragma once

// Dense double-precision inner loops shared by the classifiers, the image
// transforms and the kNN metrics.
//
// Every kernel has a scalar reference implementation. Vectorized variants
// (AVX2+FMA on x86-64, NEON on aarch64) are selected once at runtime from
// the CPU feature set; `set_isa` lets tests pin a specific variant so the
// two paths can be compared against each other.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ppa::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

/// Variants compiled into this binary and supported by the running CPU.
std::vector<Isa> available_isas();

/// Best available variant; used unless overridden.
Isa detect_isa();

Isa active_isa();

/// Pins the dispatch table. Throws std::invalid_argument if `isa` is not
/// available on this machine.
void set_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);

double squared_distance(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// y = A x, A row-major with `rows` rows.
void gemv(std::span<const double> a, std::size_t rows, std::span<const double> x,
          std::span<double> y);

/// y = A^T x, A row-major with `rows` rows.
void gemv_transposed(std::span<const double> a, std::size_t rows, std::span<const double> x,
                     std::span<double> y);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace ppa::kernels
