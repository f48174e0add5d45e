#pragma once

#include <Eigen/QR>

#include <cmath>
#include <stdexcept>
#include <utility>

#include "ffzo/types.hpp"

// Zeroth-order gradient estimation from forward evaluations only:
// central-difference directional derivatives along random Gaussian
// directions, and the resulting ascent update.

namespace ffzo::zoo {

struct DDConfig {
  double epsilon = 1e-3;       // perturbation magnitude
  int directions = 1;          // P
  double learning_rate = 1e-3; // lambda
  bool orthogonalize = false;  // experimental (off by default): QR-orthonormalize
                               // the P directions before estimation

  void validate() const {
    if (epsilon <= 0.0) throw std::invalid_argument("DDConfig: epsilon must be > 0");
    if (directions < 1) throw std::invalid_argument("DDConfig: directions must be >= 1");
    if (learning_rate < 0.0) throw std::invalid_argument("DDConfig: learning_rate must be >= 0");
  }
};

/// Central-difference directional derivative of f at omega along v:
/// [f(omega + eps*v/|v|) - f(omega - eps*v/|v|)] / (2 eps).
/// Costs exactly two evaluations; omega itself is never modified.
template <typename F>
double directional_derivative(F&& f, const Vec& omega, const Vec& v, double epsilon) {
  if (v.size() != omega.size())
    throw std::invalid_argument("directional_derivative: dimension mismatch");
  if (epsilon <= 0.0) throw std::invalid_argument("directional_derivative: epsilon must be > 0");
  const double vnorm = v.norm();
  if (vnorm == 0.0) throw std::invalid_argument("directional_derivative: zero direction");
  const Vec step = (epsilon / vnorm) * v;
  const double f_plus = f(Vec(omega + step));
  const double f_minus = f(Vec(omega - step));
  if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
    throw std::runtime_error("directional_derivative: objective returned non-finite value");
  return (f_plus - f_minus) / (2.0 * epsilon);
}

/// Gradient estimate (n/P) * sum_p dd(v_p) * v_p/|v_p| over P directions
/// v_p ~ N(0, I). Direction draws are sequenced from the rng before any
/// evaluation, so the result is independent of evaluation order.
/// Costs exactly 2P objective evaluations.
template <typename F>
Vec estimate_gradient(F&& f, const Vec& omega, const DDConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index n = omega.size();
  if (n < 1) throw std::invalid_argument("estimate_gradient: empty parameter vector");
  Mat directions = rng.normal_mat(n, cfg.directions);
  if (cfg.orthogonalize && cfg.directions > 1) {
    // Non-standard variant: orthonormal frame instead of independent draws.
    Eigen::HouseholderQR<Mat> qr(directions);
    directions = Mat(qr.householderQ()).leftCols(cfg.directions);
  }
  Vec grad = Vec::Zero(n);
  for (int p = 0; p < cfg.directions; ++p) {
    const Vec v = directions.col(p);
    const double dd = directional_derivative(f, omega, v, cfg.epsilon);
    grad.noalias() += (dd / v.norm()) * v;
  }
  grad *= static_cast<double>(n) / static_cast<double>(cfg.directions);
  return grad;
}

/// One ascent step on the goodness objective:
/// omega + lambda * estimate_gradient(...). Returns the updated copy;
/// trainers negate the objective when minimizing a loss.
template <typename F>
Vec dd_step(F&& f, const Vec& omega, const DDConfig& cfg, Rng& rng) {
  Vec grad = estimate_gradient(std::forward<F>(f), omega, cfg, rng);
  return omega + cfg.learning_rate * grad;
}

}  // namespace ffzo::zoo
