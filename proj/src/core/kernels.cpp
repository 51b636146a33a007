#include "ppa/kernels.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

namespace ppa::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace scalar

namespace {

struct Table {
  Isa isa;
  double (*dot)(const double*, const double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
};

constexpr Table kScalar{Isa::scalar, scalar::dot, scalar::squared_distance, scalar::axpy};
#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2{Isa::avx2, avx2::dot, avx2::squared_distance, avx2::axpy};
#endif
#if defined(__aarch64__)
constexpr Table kNeon{Isa::neon, neon::dot, neon::squared_distance, neon::axpy};
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const Table* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &kScalar;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return &kAvx2;
#else
      return nullptr;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return &kNeon;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

std::atomic<const Table*>& active_table() {
  static std::atomic<const Table*> table{table_for(detect_isa())};
  return table;
}

const Table& current() { return *active_table().load(std::memory_order_relaxed); }

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": size mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
    if (table_for(isa) != nullptr && cpu_supports(isa)) out.push_back(isa);
  }
  return out;
}

Isa detect_isa() {
  if (table_for(Isa::avx2) != nullptr && cpu_supports(Isa::avx2)) return Isa::avx2;
  if (table_for(Isa::neon) != nullptr && cpu_supports(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa active_isa() { return current().isa; }

void set_isa(Isa isa) {
  const Table* table = table_for(isa);
  if (table == nullptr || !cpu_supports(isa)) {
    throw std::invalid_argument("kernel variant not available: " + std::string(isa_name(isa)));
  }
  active_table().store(table, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "dot");
  return current().dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "squared_distance");
  return current().squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_sizes(x.size(), y.size(), "axpy");
  current().axpy(alpha, x.data(), y.data(), x.size());
}

void gemv(std::span<const double> a, std::size_t rows, std::span<const double> x,
          std::span<double> y) {
  check_sizes(rows, y.size(), "gemv rows");
  check_sizes(a.size(), rows * x.size(), "gemv matrix");
  const Table& t = current();
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) y[r] = t.dot(a.data() + r * cols, x.data(), cols);
}

void gemv_transposed(std::span<const double> a, std::size_t rows, std::span<const double> x,
                     std::span<double> y) {
  check_sizes(rows, x.size(), "gemv_transposed rows");
  check_sizes(a.size(), rows * y.size(), "gemv_transposed matrix");
  const Table& t = current();
  const std::size_t cols = y.size();
  for (double& v : y) v = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (x[r] != 0.0) t.axpy(x[r], a.data() + r * cols, y.data(), cols);
  }
}

}  // namespace ppa::kernels
