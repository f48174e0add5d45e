#include "ffzo/infer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>

namespace ffzo::infer {
namespace {

// Units grouped by stage: a dense layer is a singleton group, a conv
// layer's channels form one group that casts a single vote.
std::vector<std::vector<std::size_t>> layer_groups(const nn::Model& m) {
  std::vector<std::vector<std::size_t>> groups;
  int last_stage = -1;
  for (std::size_t u = 0; u < m.units().size(); ++u) {
    const int stage = m.units()[u].stage;
    if (stage != last_stage) {
      groups.emplace_back();
      last_stage = stage;
    }
    groups.back().push_back(u);
  }
  return groups;
}

void check_class_bank(const nn::Model& m, const PrototypeBank& bank) {
  if (bank.per_unit.size() != m.units().size()) {
    throw std::invalid_argument("predict: prototype bank does not cover every unit");
  }
  const Index classes = bank.per_unit.empty() ? 0 : bank.per_unit.front().cols();
  if (classes < 2) throw std::invalid_argument("predict: need at least 2 classes");
  for (std::size_t u = 0; u < bank.per_unit.size(); ++u) {
    if (bank.per_unit[u].cols() != classes) {
      throw std::invalid_argument("predict: units disagree on the class count");
    }
    if (bank.per_unit[u].rows() != m.tap_dim(m.units()[u])) {
      throw std::invalid_argument("predict: prototype dimension does not match the tap");
    }
  }
}

void check_regression_bank(const nn::Model& m, const RegressionBank& bank) {
  if (bank.per_unit.size() != m.units().size()) {
    throw std::invalid_argument("predict: regression bank does not cover every unit");
  }
  for (std::size_t u = 0; u < bank.per_unit.size(); ++u) {
    if (bank.per_unit[u].size() != m.tap_dim(m.units()[u])) {
      throw std::invalid_argument("predict: target direction does not match the tap");
    }
  }
}

Vec unit_class_scores(const Mat& prototypes, const Vec& tap) {
  Vec scores(prototypes.cols());
  for (Index c = 0; c < prototypes.cols(); ++c) scores(c) = goodness(tap, prototypes.col(c));
  return scores;
}

int argmax(const Vec& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

PrototypeBank make_class_bank(const nn::Model& m, int num_classes, Rng& rng) {
  PrototypeBank bank;
  for (const auto& u : m.units()) {
    bank.per_unit.push_back(proto::make_prototypes(num_classes, m.tap_dim(u), rng).vectors);
  }
  return bank;
}

RegressionBank make_regression_bank(const nn::Model& m, Rng& rng) {
  RegressionBank bank;
  for (const auto& u : m.units()) {
    bank.per_unit.push_back(proto::regression_prototypes(m.tap_dim(u), rng).upper);
  }
  return bank;
}

int resolve_vote(const std::vector<int>& votes, const Vec& last_layer_scores) {
  if (votes.empty()) throw std::invalid_argument("resolve_vote: no votes");
  std::map<int, int> counts;
  for (const int v : votes) {
    if (v < 0 || v >= last_layer_scores.size()) {
      throw std::invalid_argument("resolve_vote: vote outside the class domain");
    }
    ++counts[v];
  }
  int top = 0;
  for (const auto& [cls, n] : counts) top = std::max(top, n);
  std::vector<int> tied;
  for (const auto& [cls, n] : counts) {
    if (n == top) tied.push_back(cls);
  }
  if (tied.size() == 1) return tied.front();
  const int last = votes.back();
  if (std::find(tied.begin(), tied.end(), last) != tied.end()) return last;
  int best = tied.front();
  for (const int cls : tied) {
    if (last_layer_scores(cls) > last_layer_scores(best)) best = cls;
  }
  return best;
}

Prediction predict_class(const nn::Model& m, const PrototypeBank& bank, const Vec& x) {
  check_class_bank(m, bank);
  const auto result = nn::forward_with_taps(m, x);
  const auto groups = layer_groups(m);

  Prediction pred;
  Vec last_scores;
  for (const auto& group : groups) {
    Vec scores;
    if (group.size() == 1 && m.units()[group.front()].channel < 0) {
      scores = unit_class_scores(bank.per_unit[group.front()], result.taps[group.front()]);
    } else {
      Mat per_channel(static_cast<Index>(group.size()), bank.num_classes());
      for (std::size_t k = 0; k < group.size(); ++k) {
        per_channel.row(static_cast<Index>(k)) =
            unit_class_scores(bank.per_unit[group[k]], result.taps[group[k]]).transpose();
      }
      scores = channel_aggregate_classification(per_channel);
    }
    pred.per_layer_votes.push_back(argmax(scores));
    last_scores = scores;
  }
  pred.final_class = resolve_vote(pred.per_layer_votes, last_scores);
  return pred;
}

Prediction predict_regression(const nn::Model& m, const RegressionBank& bank, const Vec& x) {
  check_regression_bank(m, bank);
  const auto result = nn::forward_with_taps(m, x);
  const auto groups = layer_groups(m);

  Prediction pred;
  pred.per_layer_goodness.resize(static_cast<Index>(groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.size() == 1 && m.units()[group.front()].channel < 0) {
      pred.per_layer_goodness(static_cast<Index>(g)) =
          goodness(result.taps[group.front()], bank.per_unit[group.front()]);
    } else {
      Vec per_channel(static_cast<Index>(group.size()));
      for (std::size_t k = 0; k < group.size(); ++k) {
        per_channel(static_cast<Index>(k)) =
            goodness(result.taps[group[k]], bank.per_unit[group[k]]);
      }
      pred.per_layer_goodness(static_cast<Index>(g)) = channel_aggregate_regression(per_channel);
    }
  }
  pred.final_value = pred.per_layer_goodness(pred.per_layer_goodness.size() - 1);
  return pred;
}

double r_squared(const Vec& pred, const Vec& target) {
  if (pred.size() != target.size() || pred.size() < 2) {
    throw std::invalid_argument("r_squared: need matching vectors with >= 2 entries");
  }
  const double ss_res = (pred - target).squaredNorm();
  const double ss_tot = (target.array() - target.mean()).square().sum();
  if (ss_tot <= 0.0) throw std::invalid_argument("r_squared: constant targets");
  return 1.0 - ss_res / ss_tot;
}

EvalMetrics evaluate_classification(const nn::Model& m, const PrototypeBank& bank,
                                    const data::DatasetSplit& split) {
  if (!split.classification()) {
    throw std::invalid_argument("evaluate_classification: split has no labels");
  }
  EvalMetrics metrics;
  metrics.count = split.size();
  Index correct = 0;
  for (Index i = 0; i < split.size(); ++i) {
    const auto pred = predict_class(m, bank, split.inputs.col(i));
    if (pred.final_class == split.labels(i)) ++correct;
  }
  metrics.accuracy = double(correct) / double(split.size());
  return metrics;
}

EvalMetrics evaluate_regression(const nn::Model& m, const RegressionBank& bank,
                                const data::DatasetSplit& split) {
  if (split.targets.size() != split.size()) {
    throw std::invalid_argument("evaluate_regression: split has no targets");
  }
  Vec pred(split.size());
  for (Index i = 0; i < split.size(); ++i) {
    pred(i) = predict_regression(m, bank, split.inputs.col(i)).final_value;
  }
  EvalMetrics metrics;
  metrics.count = split.size();
  metrics.r2 = r_squared(pred, split.targets);
  return metrics;
}

EvalMetrics evaluate_bp_classification(const nn::Model& m, const data::DatasetSplit& split) {
  if (!split.classification()) {
    throw std::invalid_argument("evaluate_bp_classification: split has no labels");
  }
  EvalMetrics metrics;
  metrics.count = split.size();
  Index correct = 0;
  if (nn::is_dense_only(m.spec())) {
    const Mat logits = nn::forward_batch(m, split.inputs);
    for (Index i = 0; i < split.size(); ++i) {
      Index best = 0;
      logits.col(i).maxCoeff(&best);
      if (static_cast<int>(best) == split.labels(i)) ++correct;
    }
  } else {
    for (Index i = 0; i < split.size(); ++i) {
      const Vec logits = nn::forward_with_taps(m, split.inputs.col(i)).output;
      Index best = 0;
      logits.maxCoeff(&best);
      if (static_cast<int>(best) == split.labels(i)) ++correct;
    }
  }
  metrics.accuracy = double(correct) / double(split.size());
  return metrics;
}

EvalMetrics evaluate_bp_regression(const nn::Model& m, const data::DatasetSplit& split) {
  if (split.targets.size() != split.size()) {
    throw std::invalid_argument("evaluate_bp_regression: split has no targets");
  }
  Vec pred(split.size());
  if (nn::is_dense_only(m.spec())) {
    const Mat out = nn::forward_batch(m, split.inputs);
    if (out.rows() != 1) throw std::invalid_argument("evaluate_bp_regression: head is not scalar");
    pred = out.row(0).transpose();
  } else {
    for (Index i = 0; i < split.size(); ++i) {
      const Vec out = nn::forward_with_taps(m, split.inputs.col(i)).output;
      if (out.size() != 1) throw std::invalid_argument("evaluate_bp_regression: head is not scalar");
      pred(i) = out(0);
    }
  }
  EvalMetrics metrics;
  metrics.count = split.size();
  metrics.r2 = r_squared(pred, split.targets);
  return metrics;
}

void write_predictions_csv(const std::string& path, const std::vector<Prediction>& preds,
                           const VecI& labels) {
  if (preds.empty()) throw std::invalid_argument("write_predictions_csv: no predictions");
  if (labels.size() > 0 && labels.size() != static_cast<Index>(preds.size())) {
    throw std::invalid_argument("write_predictions_csv: label count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "sample_id";
  for (std::size_t l = 0; l < preds.front().per_layer_votes.size(); ++l) out << ",vote_" << l;
  out << ",final";
  if (labels.size() > 0) out << ",label";
  out << "\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << i;
    for (const int v : preds[i].per_layer_votes) out << "," << v;
    out << "," << preds[i].final_class;
    if (labels.size() > 0) out << "," << labels(static_cast<Index>(i));
    out << "\n";
  }
}

void write_regression_csv(const std::string& path, const std::vector<Prediction>& preds,
                          const Vec& targets) {
  if (preds.empty()) throw std::invalid_argument("write_regression_csv: no predictions");
  if (targets.size() > 0 && targets.size() != static_cast<Index>(preds.size())) {
    throw std::invalid_argument("write_regression_csv: target count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17) << "sample_id";
  for (Index l = 0; l < preds.front().per_layer_goodness.size(); ++l) out << ",goodness_" << l;
  out << ",final";
  if (targets.size() > 0) out << ",target";
  out << "\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << i;
    for (Index l = 0; l < preds[i].per_layer_goodness.size(); ++l) {
      out << "," << preds[i].per_layer_goodness(l);
    }
    out << "," << preds[i].final_value;
    if (targets.size() > 0) out << "," << targets(static_cast<Index>(i));
    out << "\n";
  }
}

}  // namespace ffzo::infer
