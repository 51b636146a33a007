#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ppa/kernels.hpp"
#include "ppa/rng.hpp"

using namespace ppa;

namespace {

std::vector<double> random_vector(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-3.0, 3.0);
  return v;
}

struct IsaGuard {
  kernels::Isa saved = kernels::active_isa();
  ~IsaGuard() { kernels::set_isa(saved); }
};

}  // namespace

TEST_CASE("scalar kernel is always available and detect_isa is listed") {
  const auto isas = kernels::available_isas();
  REQUIRE(!isas.empty());
  CHECK(isas.front() == kernels::Isa::scalar);
  bool found = false;
  for (auto isa : isas) found = found || isa == kernels::detect_isa();
  CHECK(found);
}

TEST_CASE("set_isa rejects unavailable variants") {
  IsaGuard guard;
  for (auto isa : {kernels::Isa::avx2, kernels::Isa::neon}) {
    bool available = false;
    for (auto a : kernels::available_isas()) available = available || a == isa;
    if (!available) CHECK_THROWS_AS(kernels::set_isa(isa), std::invalid_argument);
  }
}

TEST_CASE("vector kernels agree with the scalar reference on every length up to 67") {
  IsaGuard guard;
  RngStream rng(11, 3);
  for (auto isa : kernels::available_isas()) {
    CAPTURE(kernels::isa_name(isa));
    for (std::size_t n = 0; n <= 67; ++n) {
      const auto a = random_vector(n, rng);
      const auto b = random_vector(n, rng);
      kernels::set_isa(isa);
      const double dot = kernels::dot(a, b);
      const double dist = kernels::squared_distance(a, b);
      std::vector<double> y = b;
      kernels::axpy(0.75, a, y);

      const double ref_dot = kernels::scalar::dot(a.data(), b.data(), n);
      const double ref_dist = kernels::scalar::squared_distance(a.data(), b.data(), n);
      std::vector<double> ref_y = b;
      kernels::scalar::axpy(0.75, a.data(), ref_y.data(), n);

      const double scale = 1.0 + static_cast<double>(n) * 9.0;
      CHECK(std::abs(dot - ref_dot) <= 1e-12 * scale);
      CHECK(std::abs(dist - ref_dist) <= 1e-12 * scale);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y[i] - ref_y[i]) <= 1e-13);
    }
  }
}

TEST_CASE("gemv and gemv_transposed agree across variants and with a naive loop") {
  IsaGuard guard;
  RngStream rng(12, 4);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 7}, {24, 432}, {17, 33}}) {
    const auto a = random_vector(rows * cols, rng);
    const auto x = random_vector(cols, rng);
    const auto xt = random_vector(rows, rng);
    std::vector<double> naive(rows, 0.0), naive_t(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        naive[r] += a[r * cols + c] * x[c];
        naive_t[c] += a[r * cols + c] * xt[r];
      }
    }
    for (auto isa : kernels::available_isas()) {
      kernels::set_isa(isa);
      std::vector<double> y(rows), yt(cols);
      kernels::gemv(a, rows, x, y);
      kernels::gemv_transposed(a, rows, xt, yt);
      for (std::size_t r = 0; r < rows; ++r) CHECK(y[r] == doctest::Approx(naive[r]).epsilon(1e-12));
      for (std::size_t c = 0; c < cols; ++c) CHECK(yt[c] == doctest::Approx(naive_t[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("kernels reject mismatched lengths") {
  std::vector<double> a(3), b(4);
  CHECK_THROWS(kernels::dot(a, b));
  CHECK_THROWS(kernels::squared_distance(a, b));
  CHECK_THROWS(kernels::axpy(1.0, a, b));
}
