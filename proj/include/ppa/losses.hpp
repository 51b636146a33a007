#pragma once

// Classification losses on raw logits with closed-form gradients.

#include <cstddef>
#include <span>
#include <vector>

namespace ppa::losses {

/// Value of the non-zero entry of the Poincare target vector. Must stay
/// strictly below 1 so the target lies inside the unit ball.
inline constexpr double kPoincareTargetValue = 0.9999;

/// Guard on ||u||^2 near the ball boundary.
inline constexpr double kBallEpsilon = 1e-6;
/// Guard on the arcosh argument near 1.
inline constexpr double kArcoshEpsilon = 1e-12;
/// Minimum ||o||_1 for which the normalized logits are defined.
inline constexpr double kNormEpsilon = 1e-12;

enum class LossKind { poincare, cross_entropy };

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
  /// Set when ||u||^2 was within kBallEpsilon of 1 (or beyond) and had to be
  /// clamped. Only the Poincare loss sets it.
  bool clamped = false;
};

/// Numerically stable softmax. Throws ContractViolation for non-finite logits.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(o)_c with gradient softmax(o) - onehot(c).
LossResult cross_entropy(std::span<const double> logits, std::size_t target_class);

/// Poincare distance between u = o / ||o||_1 and v = 0.9999 * onehot(c).
///
/// With alpha = 1 - ||u||^2, beta = 1 - ||v||^2 and
/// gamma = 1 + 2 ||u - v||^2 / (alpha beta):
///   loss      = arcosh(gamma)
///   dL/du_j   = 4 / (beta sqrt(gamma^2 - 1)) * (alpha (u_j - v_j) + u_j ||u - v||^2) / alpha^2
///   du_j/do_k = (delta_jk ||o||_1 - o_j sign(o_k)) / ||o||_1^2
/// sign(0) is taken as 0. The gradient is zero when u == v.
/// Throws DegenerateInput when ||o||_1 <= kNormEpsilon.
LossResult poincare_loss(std::span<const double> logits, std::size_t target_class);

/// Poincare distance between two free points of the unit ball, with the same
/// guards as poincare_loss. Exposed for the symmetry property.
double poincare_distance(std::span<const double> u, std::span<const double> v);

LossResult classification_loss(LossKind kind, std::span<const double> logits,
                               std::size_t target_class);

/// log(1 + exp(x)), overflow-safe.
double softplus(double x);

/// weight * softplus(-d_logit). Non-saturating realism penalty on a
/// discriminator logit.
double discriminator_penalty(double d_logit, double weight);

/// d penalty / d d_logit.
double discriminator_penalty_grad(double d_logit, double weight);

/// |y_c - 1| for every score on the path: the magnitude of the target-logit
/// cross-entropy gradient. Scores must lie in the open interval (0, 1).
std::vector<double> ce_gradient_magnitude_curve(std::span<const double> target_scores);

}  // namespace ppa::losses
