#include "ppa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ppa/tensor.hpp"

namespace ppa::losses {

namespace {

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    require(std::isfinite(v), std::string(what) + ": non-finite entry");
  }
}

void check_class(std::size_t target_class, std::size_t num_classes) {
  require(target_class < num_classes, "class index " + std::to_string(target_class) +
                                          " out of range for " + std::to_string(num_classes) +
                                          " classes");
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax: empty logits");
  check_finite(logits, "softmax");
  const double max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

LossResult cross_entropy(std::span<const double> logits, std::size_t target_class) {
  check_class(target_class, logits.size());
  LossResult result;
  result.grad = softmax(logits);
  const double max = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double o : logits) total += std::exp(o - max);
  result.loss = std::log(total) + max - logits[target_class];
  result.grad[target_class] -= 1.0;
  return result;
}

LossResult poincare_loss(std::span<const double> logits, std::size_t target_class) {
  check_class(target_class, logits.size());
  check_finite(logits, "poincare_loss");
  double l1 = 0.0;
  for (double o : logits) l1 += std::abs(o);
  if (!(l1 > kNormEpsilon)) throw DegenerateInput("poincare_loss: logits have zero l1 norm");

  const std::size_t n = logits.size();
  std::vector<double> u(n);
  for (std::size_t j = 0; j < n; ++j) u[j] = logits[j] / l1;

  double uu = 0.0;
  double diff_sq = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double vj = j == target_class ? kPoincareTargetValue : 0.0;
    uu += u[j] * u[j];
    diff_sq += (u[j] - vj) * (u[j] - vj);
  }

  LossResult result;
  result.grad.assign(n, 0.0);
  result.clamped = uu > 1.0 - kBallEpsilon;
  if (diff_sq == 0.0) return result;

  const double alpha = 1.0 - std::min(uu, 1.0 - kBallEpsilon);
  const double beta = 1.0 - kPoincareTargetValue * kPoincareTargetValue;
  const double gamma = std::max(1.0 + 2.0 * diff_sq / (alpha * beta), 1.0 + kArcoshEpsilon);
  result.loss = std::acosh(gamma);

  // dL/du
  const double scale = 4.0 / (beta * std::sqrt(gamma * gamma - 1.0) * alpha * alpha);
  std::vector<double> grad_u(n);
  double grad_u_dot_u = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double vj = j == target_class ? kPoincareTargetValue : 0.0;
    grad_u[j] = scale * (alpha * (u[j] - vj) + u[j] * diff_sq);
    grad_u_dot_u += grad_u[j] * u[j];
  }

  // Chain through u = o / ||o||_1:
  //   sum_j dL/du_j du_j/do_k = (dL/du_k - sign(o_k) <dL/du, u>) / ||o||_1
  for (std::size_t k = 0; k < n; ++k) {
    result.grad[k] = (grad_u[k] - sign(logits[k]) * grad_u_dot_u) / l1;
  }
  return result;
}

double poincare_distance(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "poincare_distance: dimension mismatch");
  double uu = 0.0, vv = 0.0, diff_sq = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    uu += u[j] * u[j];
    vv += v[j] * v[j];
    diff_sq += (u[j] - v[j]) * (u[j] - v[j]);
  }
  if (diff_sq == 0.0) return 0.0;
  const double alpha = 1.0 - std::min(uu, 1.0 - kBallEpsilon);
  const double beta = 1.0 - std::min(vv, 1.0 - kBallEpsilon);
  return std::acosh(std::max(1.0 + 2.0 * diff_sq / (alpha * beta), 1.0 + kArcoshEpsilon));
}

LossResult classification_loss(LossKind kind, std::span<const double> logits,
                               std::size_t target_class) {
  return kind == LossKind::poincare ? poincare_loss(logits, target_class)
                                    : cross_entropy(logits, target_class);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double discriminator_penalty(double d_logit, double weight) {
  require(weight >= 0.0, "discriminator_penalty: negative weight");
  require(std::isfinite(d_logit), "discriminator_penalty: non-finite logit");
  if (weight == 0.0) return 0.0;
  return weight * softplus(-d_logit);
}

double discriminator_penalty_grad(double d_logit, double weight) {
  require(weight >= 0.0, "discriminator_penalty: negative weight");
  // d/dd softplus(-d) = -sigmoid(-d)
  return -weight / (1.0 + std::exp(d_logit));
}

std::vector<double> ce_gradient_magnitude_curve(std::span<const double> target_scores) {
  std::vector<double> out;
  out.reserve(target_scores.size());
  for (double y : target_scores) {
    require(y > 0.0 && y < 1.0, "ce_gradient_magnitude_curve: score outside (0, 1)");
    out.push_back(1.0 - y);
  }
  return out;
}

}  // namespace ppa::losses
