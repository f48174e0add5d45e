#pragma once

#include <string>
#include <vector>

#include "ffzo/data.hpp"
#include "ffzo/nn.hpp"
#include "ffzo/prototypes.hpp"
#include "ffzo/types.hpp"

// Prediction from trained models: every tapped layer casts a class vote
// (conv layers aggregate their channels), majority wins, and a documented
// deterministic tie policy covers the degenerate cases. Regression reads
// the last layer's goodness.

namespace ffzo::infer {

/// One prototype set per trainable unit, aligned with model.units();
/// tap_dim(u) x num_classes each.
struct PrototypeBank {
  std::vector<Mat> per_unit;

  int num_classes() const {
    return per_unit.empty() ? 0 : static_cast<int>(per_unit.front().cols());
  }
};

/// Unit-norm regression target direction per unit.
struct RegressionBank {
  std::vector<Vec> per_unit;
};

/// Fresh randomly rotated prototypes for every unit, in units() order.
PrototypeBank make_class_bank(const nn::Model& m, int num_classes, Rng& rng);
RegressionBank make_regression_bank(const nn::Model& m, Rng& rng);

struct Prediction {
  std::vector<int> per_layer_votes;  // classification, one per tapped layer
  Vec per_layer_goodness;            // regression, one per tapped layer
  int final_class = -1;
  double final_value = 0.0;
};

/// Majority vote: a unique mode wins; among tied modes the last layer's
/// vote wins if it is one of them, otherwise the tied class with the
/// highest last-layer score.
int resolve_vote(const std::vector<int>& votes, const Vec& last_layer_scores);

/// Single forward pass; per-layer argmax votes over class goodness (conv
/// layers vote on their channel-aggregated scores).
Prediction predict_class(const nn::Model& m, const PrototypeBank& bank, const Vec& x);

/// Single forward pass; final value is the last layer's goodness against
/// its target direction (conv layers aggregate channels by mean).
Prediction predict_regression(const nn::Model& m, const RegressionBank& bank, const Vec& x);

struct EvalMetrics {
  double accuracy = 0.0;
  double r2 = 0.0;
  Index count = 0;
};

/// 1 - SS_res / SS_tot. Zero for the constant-mean predictor, 1 for a
/// perfect one; throws when the targets are constant.
double r_squared(const Vec& pred, const Vec& target);

EvalMetrics evaluate_classification(const nn::Model& m, const PrototypeBank& bank,
                                    const data::DatasetSplit& split);
EvalMetrics evaluate_regression(const nn::Model& m, const RegressionBank& bank,
                                const data::DatasetSplit& split);

// Globally trained baselines read the head directly: argmax over logits,
// or the scalar output for regression.
EvalMetrics evaluate_bp_classification(const nn::Model& m, const data::DatasetSplit& split);
EvalMetrics evaluate_bp_regression(const nn::Model& m, const data::DatasetSplit& split);

/// sample_id, one vote column per layer, final, label (label column only
/// when labels are present).
void write_predictions_csv(const std::string& path, const std::vector<Prediction>& preds,
                           const VecI& labels);
/// sample_id, one goodness column per layer, final, target.
void write_regression_csv(const std::string& path, const std::vector<Prediction>& preds,
                          const Vec& targets);

}  // namespace ffzo::infer
