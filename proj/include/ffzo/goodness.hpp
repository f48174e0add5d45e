#pragma once

#include <algorithm>
#include <stdexcept>

#include "ffzo/types.hpp"

namespace ffzo {

/// Norm guard: the goodness of an exactly-zero layer output is 0.
inline constexpr double kNormGuard = 1e-12;

enum class ObjectiveMode { kMargin, kAlphaWeighted };

/// Layer-local classification objective knobs. `alpha` < 0 selects the
/// default N-1 at evaluation time.
struct ClassificationObjectiveConfig {
  double margin = 0.3;
  double alpha = -1.0;
  ObjectiveMode mode = ObjectiveMode::kMargin;

  double resolved_alpha(int num_classes) const {
    return alpha > 0.0 ? alpha : static_cast<double>(num_classes - 1);
  }
};

/// Cosine similarity between a layer output and a unit prototype,
/// prototype . z / max(|z|, 1e-12). Scale-invariant in z for z != 0.
template <typename DZ, typename DP>
double goodness(const Eigen::MatrixBase<DZ>& z, const Eigen::MatrixBase<DP>& prototype) {
  if (z.size() != prototype.size())
    throw std::invalid_argument("goodness: dimension mismatch");
  const double n = z.norm();
  return prototype.dot(z) / std::max(n, kNormGuard);
}

/// Class-wise goodness for a batch: columns of Z are layer outputs, columns
/// of prototypes are classes. Returns an N x B score matrix.
inline Mat class_goodness_batch(const Mat& prototypes, const Mat& Z) {
  if (prototypes.rows() != Z.rows())
    throw std::invalid_argument("class_goodness_batch: dimension mismatch");
  Mat scores = prototypes.transpose() * Z;
  for (Index b = 0; b < Z.cols(); ++b)
    scores.col(b) /= std::max(Z.col(b).norm(), kNormGuard);
  return scores;
}

/// Hinge margin loss: sum over wrong classes of
/// max(0, G(wrong) - G(true) + q). Zero iff the true class beats every
/// other class by at least q.
template <typename D>
double margin_loss(const Eigen::MatrixBase<D>& goodnesses, int true_class, double q) {
  const Index n = goodnesses.size();
  if (n < 2) throw std::invalid_argument("margin_loss: need >= 2 classes");
  if (true_class < 0 || true_class >= n)
    throw std::invalid_argument("margin_loss: true_class out of range");
  if (q < 0.0) throw std::invalid_argument("margin_loss: q must be >= 0");
  const double g_true = goodnesses[true_class];
  double loss = 0.0;
  for (Index j = 0; j < n; ++j) {
    if (j == true_class) continue;
    loss += std::max(0.0, goodnesses[j] - g_true + q);
  }
  return loss;
}

/// Alignment objective to maximize: alpha * G(true) - sum of other scores.
template <typename D>
double alpha_objective(const Eigen::MatrixBase<D>& goodnesses, int true_class, double alpha) {
  const Index n = goodnesses.size();
  if (true_class < 0 || true_class >= n)
    throw std::invalid_argument("alpha_objective: true_class out of range");
  const double g_true = goodnesses[true_class];
  return alpha * g_true - (goodnesses.sum() - g_true);
}

/// Regression objective to maximize: -(g - y_gt)^2 with y_gt in [-1, 1].
inline double regression_objective(double g, double y_gt) {
  if (y_gt < -1.0 || y_gt > 1.0)
    throw std::invalid_argument("regression_objective: target outside [-1, 1]");
  const double e = g - y_gt;
  return -e * e;
}

/// Class scores accumulated across channels: column sums of a C x N matrix.
inline Vec channel_aggregate_classification(const Mat& per_channel_goodnesses) {
  if (per_channel_goodnesses.rows() < 1)
    throw std::invalid_argument("channel_aggregate_classification: empty input");
  return per_channel_goodnesses.colwise().sum().transpose();
}

/// Mean goodness over channels.
inline double channel_aggregate_regression(const Vec& per_channel_goodnesses) {
  if (per_channel_goodnesses.size() < 1)
    throw std::invalid_argument("channel_aggregate_regression: empty input");
  return per_channel_goodnesses.mean();
}

}  // namespace ffzo
