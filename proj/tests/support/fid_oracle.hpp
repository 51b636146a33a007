#pragma once

// Long-double reference for the Frechet distance: cyclic Jacobi
// eigendecomposition, no Eigen.

#include <cmath>
#include <cstddef>
#include <vector>

namespace ppa::testing {

using LMatrix = std::vector<std::vector<long double>>;

struct LEigen {
  std::vector<long double> values;
  LMatrix vectors;  // columns
};

inline LMatrix lidentity(std::size_t n) {
  LMatrix m(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0L;
  return m;
}

inline LMatrix lmul(const LMatrix& a, const LMatrix& b) {
  const std::size_t n = a.size(), p = b.size(), q = b[0].size();
  LMatrix c(n, std::vector<long double>(q, 0.0L));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t j = 0; j < q; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline LEigen jacobi_eigen(LMatrix a) {
  const std::size_t n = a.size();
  LMatrix v = lidentity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-40L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0L) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
        const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L);
        const long double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  LEigen out;
  for (std::size_t i = 0; i < n; ++i) out.values.push_back(a[i][i]);
  out.vectors = v;
  return out;
}

inline LMatrix lsqrt_psd(const LMatrix& s) {
  const LEigen e = jacobi_eigen(s);
  const std::size_t n = s.size();
  LMatrix r(n, std::vector<long double>(n, 0.0L));
  for (std::size_t k = 0; k < n; ++k) {
    const long double root = std::sqrt(std::fmax(e.values[k], 0.0L));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) r[i][j] += root * e.vectors[i][k] * e.vectors[j][k];
  }
  return r;
}

inline long double oracle_fid_moments(const std::vector<long double>& mu1, const LMatrix& s1,
                                      const std::vector<long double>& mu2, const LMatrix& s2) {
  long double d = 0.0L;
  for (std::size_t i = 0; i < mu1.size(); ++i) d += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
  const LMatrix r = lsqrt_psd(s1);
  LMatrix m = lmul(lmul(r, s2), r);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j) m[i][j] = m[j][i] = 0.5L * (m[i][j] + m[j][i]);
  long double root_trace = 0.0L;
  for (long double ev : jacobi_eigen(m).values) root_trace += std::sqrt(std::fmax(ev, 0.0L));
  long double tr = 0.0L;
  for (std::size_t i = 0; i < s1.size(); ++i) tr += s1[i][i] + s2[i][i];
  return d + tr - 2.0L * root_trace;
}

/// rows x dim row-major samples; covariance divisor n - 1.
inline void oracle_moments(const std::vector<double>& data, std::size_t rows, std::size_t dim,
                           std::vector<long double>& mean, LMatrix& cov) {
  mean.assign(dim, 0.0L);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += data[r * dim + i];
  for (auto& m : mean) m /= static_cast<long double>(rows);
  cov.assign(dim, std::vector<long double>(dim, 0.0L));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        cov[i][j] += (data[r * dim + i] - mean[i]) * (data[r * dim + j] - mean[j]);
  for (auto& row : cov)
    for (auto& v : row) v /= static_cast<long double>(rows - 1);
}

inline long double oracle_fid(const std::vector<double>& a, std::size_t na, const std::vector<double>& b,
                              std::size_t nb, std::size_t dim) {
  std::vector<long double> m1, m2;
  LMatrix c1, c2;
  oracle_moments(a, na, dim, m1, c1);
  oracle_moments(b, nb, dim, m2, c2);
  return std::fmax(oracle_fid_moments(m1, c1, m2, c2), 0.0L);
}

}  // namespace ppa::testing
