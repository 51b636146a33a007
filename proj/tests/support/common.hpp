#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ppa/models.hpp"
#include "ppa/rng.hpp"

namespace ppa::testing {

inline std::vector<double> uniform_vector(std::size_t n, double lo, double hi, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::vector<double> normal_vector(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

inline ImageTensor random_image(Shape shape, RngStream& rng, double lo = -0.9, double hi = 0.9) {
  return ImageTensor(shape, uniform_vector(shape.size(), lo, hi, rng));
}

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central differences of a scalar function.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline PrototypeClassifier random_classifier(Shape shape, std::size_t features, std::size_t classes,
                                             double sharpness, RngStream& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.size()));
  std::vector<double> projection = normal_vector(features * shape.size(), rng);
  for (double& v : projection) v *= scale;
  std::vector<double> bias = uniform_vector(features, -0.2, 0.2, rng);
  std::vector<double> prototypes = uniform_vector(features * classes, -0.8, 0.8, rng);
  return PrototypeClassifier(shape, features, std::move(projection), std::move(bias),
                             std::move(prototypes), sharpness);
}

inline BlobGeneratorParams random_generator_params(std::size_t z_dim, Shape shape, RngStream& rng) {
  BlobGeneratorParams p;
  p.z_dim = z_dim;
  p.num_blobs = 2;
  p.image_shape = shape;
  p.mapping_matrix = normal_vector(p.w_dim() * z_dim, rng);
  for (double& v : p.mapping_matrix) v /= std::sqrt(static_cast<double>(z_dim));
  p.mapping_bias = uniform_vector(p.w_dim(), -0.2, 0.2, rng);
  p.mean_latent = uniform_vector(p.w_dim(), -0.3, 0.3, rng);
  return p;
}

}  // namespace ppa::testing
