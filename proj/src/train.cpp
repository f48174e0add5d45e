#include "ffzo/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "ffzo/zoo.hpp"

namespace ffzo::train {
namespace {

// Whole-set patch caches above this size fall back to per-batch rebuilds.
constexpr std::size_t kPatchCacheBytes = 300'000'000;

struct BatchSlice {
  Index start = 0, len = 0;
};

std::vector<BatchSlice> batch_slices(Index n, Index batch) {
  std::vector<BatchSlice> out;
  for (Index s = 0; s < n; s += batch) out.push_back({s, std::min(batch, n - s)});
  return out;
}

Mat gather_cols(const Mat& X, const std::vector<Index>& perm, Index start, Index len) {
  Mat out(X.rows(), len);
  for (Index i = 0; i < len; ++i) out.col(i) = X.col(perm[static_cast<std::size_t>(start + i)]);
  return out;
}

VecI gather_labels(const VecI& y, const std::vector<Index>& perm, Index start, Index len) {
  VecI out(len);
  for (Index i = 0; i < len; ++i) out(i) = y(perm[static_cast<std::size_t>(start + i)]);
  return out;
}

Vec gather_targets(const Vec& y, const std::vector<Index>& perm, Index start, Index len) {
  Vec out(len);
  for (Index i = 0; i < len; ++i) out(i) = y(perm[static_cast<std::size_t>(start + i)]);
  return out;
}

std::vector<Index> identity_order(Index n) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  return order;
}

double class_loss_from_scores(const Mat& scores, const VecI& labels,
                              const ClassificationObjectiveConfig& cfg) {
  const int num_classes = static_cast<int>(scores.rows());
  double total = 0.0;
  for (Index b = 0; b < scores.cols(); ++b) {
    if (cfg.mode == ObjectiveMode::kMargin) {
      total += margin_loss(scores.col(b), labels(b), cfg.margin);
    } else {
      total -= alpha_objective(scores.col(b), labels(b), cfg.resolved_alpha(num_classes));
    }
  }
  return total / double(scores.cols());
}

Vec regression_goodness(const Vec& upper, const Mat& Z) {
  Vec g(Z.cols());
  for (Index b = 0; b < Z.cols(); ++b) {
    g(b) = upper.dot(Z.col(b)) / std::max(Z.col(b).norm(), kNormGuard);
  }
  return g;
}

double regression_loss(const Vec& g, const Vec& targets) {
  return (g - targets).squaredNorm() / double(g.size());
}

bool should_eval(int epoch, int epochs, int stride) {
  if (epoch == epochs - 1) return true;
  return stride > 0 && (epoch + 1) % stride == 0;
}

// ---- Dense unit objectives -------------------------------------------------

double dense_unit_class_loss(const Mat& W, const Vec& b, const Mat& Xpre, const VecI& labels,
                             const Mat& prototypes, const ClassificationObjectiveConfig& cfg) {
  const Mat Z = (W * Xpre).colwise() + b;
  return class_loss_from_scores(class_goodness_batch(prototypes, Z), labels, cfg);
}

double dense_unit_reg_loss(const Mat& W, const Vec& b, const Mat& Xpre, const Vec& targets,
                           const Vec& upper) {
  const Mat Z = (W * Xpre).colwise() + b;
  return regression_loss(regression_goodness(upper, Z), targets);
}

// ---- Conv channel plumbing -------------------------------------------------

struct ConvUnitContext {
  int stage = 0;
  int channel = 0;
  int h_out = 0, w_out = 0;
  Index patch_rows = 0;  // C_in * K_h * K_w
  // Whole-set patch cache (empty when the set is too large to hold).
  std::vector<Mat> patches;
  bool cached = false;
};

ConvUnitContext make_conv_context(const nn::Model& m, const nn::UnitRef& u,
                                  const data::DatasetSplit& train_split) {
  ConvUnitContext ctx;
  ctx.stage = u.stage;
  ctx.channel = u.channel;
  const auto& out_shape = m.shapes()[static_cast<std::size_t>(u.stage) + 1];
  ctx.h_out = out_shape.h;
  ctx.w_out = out_shape.w;
  const auto& in_shape = m.shapes()[static_cast<std::size_t>(u.stage)];
  const auto& spec = m.stages()[static_cast<std::size_t>(u.stage)].spec;
  ctx.patch_rows = Index(in_shape.channels) * spec.kernel_h * spec.kernel_w;

  const std::size_t bytes = std::size_t(train_split.size()) * std::size_t(ctx.patch_rows) *
                            std::size_t(ctx.h_out) * std::size_t(ctx.w_out) * sizeof(double);
  if (bytes <= kPatchCacheBytes) {
    ctx.patches.reserve(static_cast<std::size_t>(train_split.size()));
    const auto& conv = m.stages()[static_cast<std::size_t>(u.stage)].conv;
    for (Index i = 0; i < train_split.size(); ++i) {
      const auto maps = nn::forward_prefix_maps(m, train_split.inputs.col(i), u.stage);
      ctx.patches.push_back(nn::im2col(conv, maps, ctx.h_out, ctx.w_out));
    }
    ctx.cached = true;
  }
  return ctx;
}

// Patches for the batch, from the cache or rebuilt on the fly.
std::vector<Mat> batch_patches(const nn::Model& m, const ConvUnitContext& ctx,
                               const data::DatasetSplit& train_split,
                               const std::vector<Index>& perm, Index start, Index len) {
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(len));
  const auto& conv = m.stages()[static_cast<std::size_t>(ctx.stage)].conv;
  for (Index i = 0; i < len; ++i) {
    const Index src = perm[static_cast<std::size_t>(start + i)];
    if (ctx.cached) {
      out.push_back(ctx.patches[static_cast<std::size_t>(src)]);
    } else {
      const auto maps = nn::forward_prefix_maps(m, train_split.inputs.col(src), ctx.stage);
      out.push_back(nn::im2col(conv, maps, ctx.h_out, ctx.w_out));
    }
  }
  return out;
}

// Projected goodness tap of one channel given its flat parameters.
Vec conv_channel_tap(const Vec& flat, const Mat& patches, const Mat& projection) {
  const Index k = flat.size() - 1;
  const Vec zpix = patches.transpose() * flat.head(k) + Vec::Constant(patches.cols(), flat(k));
  return projection * zpix;
}

double conv_unit_class_loss(const Vec& flat, const std::vector<Mat>& patches,
                            const Mat& projection, const VecI& labels, const Mat& prototypes,
                            const ClassificationObjectiveConfig& cfg) {
  const int num_classes = static_cast<int>(prototypes.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Vec tap = conv_channel_tap(flat, patches[i], projection);
    Vec scores(num_classes);
    for (Index c = 0; c < num_classes; ++c) scores(c) = goodness(tap, prototypes.col(c));
    if (cfg.mode == ObjectiveMode::kMargin) {
      total += margin_loss(scores, labels(static_cast<Index>(i)), cfg.margin);
    } else {
      total -= alpha_objective(scores, labels(static_cast<Index>(i)),
                               cfg.resolved_alpha(num_classes));
    }
  }
  return total / double(patches.size());
}

double conv_unit_reg_loss(const Vec& flat, const std::vector<Mat>& patches,
                          const Mat& projection, const Vec& targets, const Vec& upper) {
  double total = 0.0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Vec tap = conv_channel_tap(flat, patches[i], projection);
    const double g = upper.dot(tap) / std::max(tap.norm(), kNormGuard);
    const double e = g - targets(static_cast<Index>(i));
    total += e * e;
  }
  return total / double(patches.size());
}

// Full-train loss of a conv unit at its current parameters.
double conv_unit_full_loss(const nn::Model& m, const nn::UnitRef& u, const ConvUnitContext& ctx,
                           const data::DatasetSplit& train_split, const Mat* prototypes,
                           const Vec* upper, const ClassificationObjectiveConfig& cfg) {
  const Vec flat = m.unit_flat(u);
  const Mat& projection =
      m.stages()[static_cast<std::size_t>(u.stage)].projections[static_cast<std::size_t>(u.channel)];
  const auto order = identity_order(train_split.size());
  double total = 0.0;
  const auto slices = batch_slices(train_split.size(), 512);
  for (const auto& s : slices) {
    const auto patches = batch_patches(m, ctx, train_split, order, s.start, s.len);
    if (prototypes != nullptr) {
      const VecI yb = train_split.labels.segment(s.start, s.len);
      total += conv_unit_class_loss(flat, patches, projection, yb, *prototypes, cfg) *
               double(s.len);
    } else {
      const Vec tb = train_split.targets.segment(s.start, s.len);
      total += conv_unit_reg_loss(flat, patches, projection, tb, *upper) * double(s.len);
    }
  }
  return total / double(train_split.size());
}

// Activations feeding a dense stage for the whole set, regardless of what
// came before that stage.
Mat dense_prefix(const nn::Model& m, const Mat& X, int stage_end) {
  if (nn::is_dense_only(m.spec())) return nn::forward_prefix(m, X, stage_end);
  Mat out;
  for (Index i = 0; i < X.cols(); ++i) {
    const Vec pre = nn::forward_prefix_flat(m, X.col(i), stage_end);
    if (i == 0) out.resize(pre.size(), X.cols());
    out.col(i) = pre;
  }
  return out;
}

zoo::DDConfig dd_config(const RunConfig& cfg) {
  zoo::DDConfig dd;
  dd.epsilon = cfg.epsilon;
  dd.directions = cfg.directions;
  dd.learning_rate = cfg.learning_rate;
  return dd;
}

double global_loss(const nn::Model& m, const Mat& X, const VecI* labels, const Mat* targets) {
  if (nn::is_dense_only(m.spec())) {
    const Mat out = nn::forward_batch(m, X);
    return labels != nullptr ? nn::cross_entropy_loss(out, *labels) : nn::mse_loss(out, *targets);
  }
  Mat out;
  for (Index i = 0; i < X.cols(); ++i) {
    const Vec o = nn::forward_with_taps(m, X.col(i)).output;
    if (i == 0) out.resize(o.size(), X.cols());
    out.col(i) = o;
  }
  return labels != nullptr ? nn::cross_entropy_loss(out, *labels) : nn::mse_loss(out, *targets);
}

}  // namespace

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kFfDd: return "ff_dd";
    case Regime::kFfAd: return "ff_ad";
    case Regime::kBpDd: return "bp_dd";
    case Regime::kBpAd: return "bp_ad";
  }
  throw std::logic_error("regime_name: unreachable");
}

Regime parse_regime(const std::string& name) {
  if (name == "ff_dd") return Regime::kFfDd;
  if (name == "ff_ad") return Regime::kFfAd;
  if (name == "bp_dd") return Regime::kBpDd;
  if (name == "bp_ad") return Regime::kBpAd;
  throw std::invalid_argument("unknown regime: " + name);
}

void RunConfig::validate() const {
  if (learning_rate < 0.0) throw std::invalid_argument("RunConfig: learning_rate must be >= 0");
  if (epsilon <= 0.0) throw std::invalid_argument("RunConfig: epsilon must be > 0");
  if (directions < 1) throw std::invalid_argument("RunConfig: directions must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("RunConfig: epochs must be >= 0");
  if (eval_stride < 0) throw std::invalid_argument("RunConfig: eval_stride must be >= 0");
  if (objective.margin < 0.0) throw std::invalid_argument("RunConfig: margin must be >= 0");
}

std::vector<EpochRecord> train_ff_unit_classification(
    nn::Model& m, std::size_t unit_index, const infer::PrototypeBank& bank,
    const data::DatasetSplit& train_split, const data::DatasetSplit& test_split,
    const RunConfig& cfg, Rng& rng, RunState& state) {
  cfg.validate();
  if (cfg.regime != Regime::kFfDd && cfg.regime != Regime::kFfAd) {
    throw std::invalid_argument("train_ff_unit: config selects a global regime");
  }
  if (unit_index >= m.units().size()) throw std::invalid_argument("train_ff_unit: bad unit index");
  const auto& u = m.units()[unit_index];
  const Mat& prototypes = bank.per_unit.at(unit_index);
  if (prototypes.rows() != m.tap_dim(u)) {
    throw std::invalid_argument("train_ff_unit: prototype dimension does not match the tap");
  }
  const bool dense = u.channel < 0;
  if (!dense && cfg.regime == Regime::kFfAd) {
    throw std::invalid_argument("ff_ad supports dense units only");
  }
  const zoo::DDConfig dd = dd_config(cfg);
  const Index n = train_split.size();
  const auto slices = batch_slices(n, cfg.batch_size);
  std::vector<EpochRecord> records;

  if (dense) {
    // The prefix is frozen while this unit trains: compute it once.
    const Mat Xpre = dense_prefix(m, train_split.inputs, u.stage);
    auto& layer = m.stages()[static_cast<std::size_t>(u.stage)].dense;
    const Index out_dim = layer.W.rows(), in_dim = layer.W.cols();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto perm = rng.permutation(n);
      for (const auto& s : slices) {
        const Mat Xb = gather_cols(Xpre, perm, s.start, s.len);
        const VecI yb = gather_labels(train_split.labels, perm, s.start, s.len);
        if (cfg.regime == Regime::kFfDd) {
          const auto objective = [&](const Vec& v) {
            const Eigen::Map<const Mat> W(v.data(), out_dim, in_dim);
            const Mat Z = (W * Xb).colwise() + v.tail(out_dim);
            return -class_loss_from_scores(class_goodness_batch(prototypes, Z), yb,
                                           cfg.objective);
          };
          m.set_unit_flat(u, zoo::dd_step(objective, m.unit_flat(u), dd, rng));
          state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
        } else {
          const auto grad =
              nn::backprop_layer_goodness_classification(layer, Xb, yb, prototypes, cfg.objective);
          layer.W -= cfg.learning_rate * grad.dW;
          layer.b -= cfg.learning_rate * grad.db;
          state.eval_count += 1;
        }
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.unit_id = static_cast<int>(unit_index);
      rec.objective =
          dense_unit_class_loss(layer.W, layer.b, Xpre, train_split.labels, prototypes,
                                cfg.objective);
      if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
        rec.metric = infer::evaluate_classification(m, bank, test_split).accuracy;
      }
      rec.eval_count = state.eval_count;
      rec.seconds = state.elapsed();
      records.push_back(rec);
    }
    return records;
  }

  // Conv channel unit.
  const auto ctx = make_conv_context(m, u, train_split);
  const Mat& projection =
      m.stages()[static_cast<std::size_t>(u.stage)].projections[static_cast<std::size_t>(u.channel)];
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (const auto& s : slices) {
      const auto patches = batch_patches(m, ctx, train_split, perm, s.start, s.len);
      const VecI yb = gather_labels(train_split.labels, perm, s.start, s.len);
      const auto objective = [&](const Vec& v) {
        return -conv_unit_class_loss(v, patches, projection, yb, prototypes, cfg.objective);
      };
      m.set_unit_flat(u, zoo::dd_step(objective, m.unit_flat(u), dd, rng));
      state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.unit_id = static_cast<int>(unit_index);
    rec.objective =
        conv_unit_full_loss(m, u, ctx, train_split, &prototypes, nullptr, cfg.objective);
    if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
      rec.metric = infer::evaluate_classification(m, bank, test_split).accuracy;
    }
    rec.eval_count = state.eval_count;
    rec.seconds = state.elapsed();
    records.push_back(rec);
  }
  return records;
}

std::vector<EpochRecord> train_ff_unit_regression(
    nn::Model& m, std::size_t unit_index, const infer::RegressionBank& bank,
    const data::DatasetSplit& train_split, const data::DatasetSplit& test_split,
    const RunConfig& cfg, Rng& rng, RunState& state) {
  cfg.validate();
  if (cfg.regime != Regime::kFfDd && cfg.regime != Regime::kFfAd) {
    throw std::invalid_argument("train_ff_unit: config selects a global regime");
  }
  if (unit_index >= m.units().size()) throw std::invalid_argument("train_ff_unit: bad unit index");
  const auto& u = m.units()[unit_index];
  const Vec& upper = bank.per_unit.at(unit_index);
  if (upper.size() != m.tap_dim(u)) {
    throw std::invalid_argument("train_ff_unit: target direction does not match the tap");
  }
  const bool dense = u.channel < 0;
  if (!dense && cfg.regime == Regime::kFfAd) {
    throw std::invalid_argument("ff_ad supports dense units only");
  }
  const zoo::DDConfig dd = dd_config(cfg);
  const Index n = train_split.size();
  const auto slices = batch_slices(n, cfg.batch_size);
  std::vector<EpochRecord> records;

  if (dense) {
    const Mat Xpre = dense_prefix(m, train_split.inputs, u.stage);
    auto& layer = m.stages()[static_cast<std::size_t>(u.stage)].dense;
    const Index out_dim = layer.W.rows(), in_dim = layer.W.cols();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto perm = rng.permutation(n);
      for (const auto& s : slices) {
        const Mat Xb = gather_cols(Xpre, perm, s.start, s.len);
        const Vec tb = gather_targets(train_split.targets, perm, s.start, s.len);
        if (cfg.regime == Regime::kFfDd) {
          const auto objective = [&](const Vec& v) {
            const Eigen::Map<const Mat> W(v.data(), out_dim, in_dim);
            const Mat Z = (W * Xb).colwise() + v.tail(out_dim);
            return -regression_loss(regression_goodness(upper, Z), tb);
          };
          m.set_unit_flat(u, zoo::dd_step(objective, m.unit_flat(u), dd, rng));
          state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
        } else {
          const auto grad = nn::backprop_layer_goodness_regression(layer, Xb, tb, upper);
          layer.W -= cfg.learning_rate * grad.dW;
          layer.b -= cfg.learning_rate * grad.db;
          state.eval_count += 1;
        }
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.unit_id = static_cast<int>(unit_index);
      rec.objective = dense_unit_reg_loss(layer.W, layer.b, Xpre, train_split.targets, upper);
      if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
        rec.metric = infer::evaluate_regression(m, bank, test_split).r2;
      }
      rec.eval_count = state.eval_count;
      rec.seconds = state.elapsed();
      records.push_back(rec);
    }
    return records;
  }

  const auto ctx = make_conv_context(m, u, train_split);
  const Mat& projection =
      m.stages()[static_cast<std::size_t>(u.stage)].projections[static_cast<std::size_t>(u.channel)];
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (const auto& s : slices) {
      const auto patches = batch_patches(m, ctx, train_split, perm, s.start, s.len);
      const Vec tb = gather_targets(train_split.targets, perm, s.start, s.len);
      const auto objective = [&](const Vec& v) {
        return -conv_unit_reg_loss(v, patches, projection, tb, upper);
      };
      m.set_unit_flat(u, zoo::dd_step(objective, m.unit_flat(u), dd, rng));
      state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.unit_id = static_cast<int>(unit_index);
    rec.objective = conv_unit_full_loss(m, u, ctx, train_split, nullptr, &upper, cfg.objective);
    if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
      rec.metric = infer::evaluate_regression(m, bank, test_split).r2;
    }
    rec.eval_count = state.eval_count;
    rec.seconds = state.elapsed();
    records.push_back(rec);
  }
  return records;
}

TrainResult train_ff_classification(const nn::Model& m0, const infer::PrototypeBank& bank,
                                    const data::DatasetSplit& train_split,
                                    const data::DatasetSplit& test_split, const RunConfig& cfg,
                                    Rng& rng) {
  if (bank.per_unit.size() != m0.units().size()) {
    throw std::invalid_argument("train_ff: prototype bank does not cover every unit");
  }
  if (!train_split.classification()) {
    throw std::invalid_argument("train_ff: split has no labels");
  }
  TrainResult result{m0, {}};
  RunState state;
  for (std::size_t k = 0; k < result.model.units().size(); ++k) {
    auto records = train_ff_unit_classification(result.model, k, bank, train_split, test_split,
                                                cfg, rng, state);
    result.log.records.insert(result.log.records.end(), records.begin(), records.end());
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = static_cast<int>(result.model.units().size()) * cfg.epochs;
  return result;
}

TrainResult train_ff_regression(const nn::Model& m0, const infer::RegressionBank& bank,
                                const data::DatasetSplit& train_split,
                                const data::DatasetSplit& test_split, const RunConfig& cfg,
                                Rng& rng) {
  if (bank.per_unit.size() != m0.units().size()) {
    throw std::invalid_argument("train_ff: regression bank does not cover every unit");
  }
  if (train_split.targets.size() != train_split.size()) {
    throw std::invalid_argument("train_ff: split has no targets");
  }
  TrainResult result{m0, {}};
  RunState state;
  for (std::size_t k = 0; k < result.model.units().size(); ++k) {
    auto records = train_ff_unit_regression(result.model, k, bank, train_split, test_split, cfg,
                                            rng, state);
    result.log.records.insert(result.log.records.end(), records.begin(), records.end());
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = static_cast<int>(result.model.units().size()) * cfg.epochs;
  return result;
}

TrainResult train_bp_dd(const nn::Model& m0, const data::DatasetSplit& train_split,
                        const data::DatasetSplit& test_split, const RunConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.regime != Regime::kBpDd) {
    throw std::invalid_argument("train_bp_dd: config selects a different regime");
  }
  const bool classification = cfg.task == nn::TaskKind::kClassification;
  if (classification && !train_split.classification()) {
    throw std::invalid_argument("train_bp_dd: split has no labels");
  }
  if (!classification && train_split.targets.size() != train_split.size()) {
    throw std::invalid_argument("train_bp_dd: split has no targets");
  }

  TrainResult result{m0, {}};
  nn::Model probe = m0;  // scratch model the objective writes probes into
  RunState state;
  const zoo::DDConfig dd = dd_config(cfg);
  const Index n = train_split.size();
  const auto slices = batch_slices(n, cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (const auto& s : slices) {
      const Mat Xb = gather_cols(train_split.inputs, perm, s.start, s.len);
      VecI yb;
      Mat tb;
      if (classification) {
        yb = gather_labels(train_split.labels, perm, s.start, s.len);
      } else {
        tb = gather_targets(train_split.targets, perm, s.start, s.len).transpose();
      }
      const auto objective = [&](const Vec& v) {
        probe.set_global_flat(v);
        return -global_loss(probe, Xb, classification ? &yb : nullptr,
                            classification ? nullptr : &tb);
      };
      result.model.set_global_flat(
          zoo::dd_step(objective, result.model.global_flat(), dd, rng));
      state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.unit_id = -1;
    const Mat targets_row =
        classification ? Mat() : Mat(train_split.targets.transpose());
    rec.objective = global_loss(result.model, train_split.inputs,
                                classification ? &train_split.labels : nullptr,
                                classification ? nullptr : &targets_row);
    if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
      rec.metric = classification
                       ? infer::evaluate_bp_classification(result.model, test_split).accuracy
                       : infer::evaluate_bp_regression(result.model, test_split).r2;
    }
    rec.eval_count = state.eval_count;
    rec.seconds = state.elapsed();
    result.log.records.push_back(rec);
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = cfg.epochs;
  return result;
}

TrainResult train_bp_ad(const nn::Model& m0, const data::DatasetSplit& train_split,
                        const data::DatasetSplit& test_split, const RunConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.regime != Regime::kBpAd) {
    throw std::invalid_argument("train_bp_ad: config selects a different regime");
  }
  const bool classification = cfg.task == nn::TaskKind::kClassification;
  TrainResult result{m0, {}};
  RunState state;
  const Index n = train_split.size();
  const auto slices = batch_slices(n, cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (const auto& s : slices) {
      const Mat Xb = gather_cols(train_split.inputs, perm, s.start, s.len);
      std::vector<nn::UnitGrad> grads;
      if (classification) {
        const VecI yb = gather_labels(train_split.labels, perm, s.start, s.len);
        grads = nn::backprop_cross_entropy(result.model, Xb, yb);
      } else {
        const Mat tb = gather_targets(train_split.targets, perm, s.start, s.len).transpose();
        grads = nn::backprop_mse(result.model, Xb, tb);
      }
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& layer =
            result.model.stages()[static_cast<std::size_t>(result.model.units()[k].stage)].dense;
        layer.W -= cfg.learning_rate * grads[k].dW;
        layer.b -= cfg.learning_rate * grads[k].db;
      }
      state.eval_count += 1;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.unit_id = -1;
    const Mat targets_row =
        classification ? Mat() : Mat(train_split.targets.transpose());
    rec.objective = global_loss(result.model, train_split.inputs,
                                classification ? &train_split.labels : nullptr,
                                classification ? nullptr : &targets_row);
    if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
      rec.metric = classification
                       ? infer::evaluate_bp_classification(result.model, test_split).accuracy
                       : infer::evaluate_bp_regression(result.model, test_split).r2;
    }
    rec.eval_count = state.eval_count;
    rec.seconds = state.elapsed();
    result.log.records.push_back(rec);
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = cfg.epochs;
  return result;
}

// ---- Photonic --------------------------------------------------------------

PhotonicBank make_photonic_bank(const photonic::MeshNetwork& net, int num_classes, Rng& rng) {
  PhotonicBank bank;
  for (int k = 0; k < net.num_meshes(); ++k) {
    bank.per_mesh.push_back(proto::make_prototypes(num_classes, net.ports(), rng).vectors);
  }
  return bank;
}

infer::Prediction photonic_predict(const photonic::MeshNetwork& net, const PhotonicBank& bank,
                                   const CVec& encoded) {
  if (bank.per_mesh.size() != static_cast<std::size_t>(net.num_meshes())) {
    throw std::invalid_argument("photonic_predict: bank does not cover every mesh");
  }
  infer::Prediction pred;
  Vec last_scores;
  CVec field = encoded;
  for (int k = 0; k < net.num_meshes(); ++k) {
    const CVec out = net.mesh(k).forward(field);
    const Vec I = photonic::intensity_readout(out);
    const Mat& prototypes = bank.per_mesh[static_cast<std::size_t>(k)];
    Vec scores(prototypes.cols());
    for (Index c = 0; c < prototypes.cols(); ++c) scores(c) = goodness(I, prototypes.col(c));
    Index best = 0;
    scores.maxCoeff(&best);
    pred.per_layer_votes.push_back(static_cast<int>(best));
    last_scores = scores;
    if (k + 1 < net.num_meshes()) field = net.activation()(out);
  }
  pred.final_class = infer::resolve_vote(pred.per_layer_votes, last_scores);
  return pred;
}

double photonic_accuracy(const photonic::MeshNetwork& net, const PhotonicBank& bank,
                         const CMat& fields, const VecI& labels) {
  Index correct = 0;
  for (Index i = 0; i < fields.cols(); ++i) {
    if (photonic_predict(net, bank, fields.col(i)).final_class == labels(i)) ++correct;
  }
  return double(correct) / double(fields.cols());
}

double photonic_bp_accuracy(const photonic::MeshNetwork& net, int num_classes,
                            const CMat& fields, const VecI& labels) {
  Index correct = 0;
  for (Index i = 0; i < fields.cols(); ++i) {
    const Vec I = photonic::intensity_readout(net.forward(fields.col(i)));
    Index best = 0;
    I.head(num_classes).maxCoeff(&best);
    if (static_cast<int>(best) == labels(i)) ++correct;
  }
  return double(correct) / double(fields.cols());
}

namespace {

CMat gather_fields(const CMat& X, const std::vector<Index>& perm, Index start, Index len) {
  CMat out(X.rows(), len);
  for (Index i = 0; i < len; ++i) out.col(i) = X.col(perm[static_cast<std::size_t>(start + i)]);
  return out;
}

double photonic_stage_loss(const photonic::MZIMesh& mesh, const CMat& stage_inputs,
                           const VecI& labels, const Mat& prototypes,
                           const ClassificationObjectiveConfig& cfg) {
  const int num_classes = static_cast<int>(prototypes.cols());
  double total = 0.0;
  for (Index b = 0; b < stage_inputs.cols(); ++b) {
    const Vec scores = photonic::photonic_scores(mesh, stage_inputs.col(b), prototypes);
    if (cfg.mode == ObjectiveMode::kMargin) {
      total += margin_loss(scores, labels(b), cfg.margin);
    } else {
      total -= alpha_objective(scores, labels(b), cfg.resolved_alpha(num_classes));
    }
  }
  return total / double(stage_inputs.cols());
}

}  // namespace

PhotonicResult train_ff_photonic(const photonic::MeshNetwork& net0, const PhotonicBank& bank,
                                 const CMat& train_fields, const VecI& train_labels,
                                 const CMat& test_fields, const VecI& test_labels,
                                 const RunConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.regime != Regime::kFfDd) {
    throw std::invalid_argument("train_ff_photonic: only the zeroth-order layer-local regime applies");
  }
  if (bank.per_mesh.size() != static_cast<std::size_t>(net0.num_meshes())) {
    throw std::invalid_argument("train_ff_photonic: bank does not cover every mesh");
  }
  if (train_fields.cols() != train_labels.size()) {
    throw std::invalid_argument("train_ff_photonic: batch size mismatch");
  }

  PhotonicResult result{net0, {}};
  auto& net = result.net;
  RunState state;
  const zoo::DDConfig dd = dd_config(cfg);
  const Index n = train_fields.cols();
  const auto slices = batch_slices(n, cfg.batch_size);

  // Fields entering the unit under training; upstream meshes are frozen,
  // so this cache advances only between units.
  CMat stage_in = train_fields;
  for (int k = 0; k < net.num_meshes(); ++k) {
    const Mat& prototypes = bank.per_mesh[static_cast<std::size_t>(k)];
    photonic::MZIMesh probe = net.mesh(k);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto perm = rng.permutation(n);
      for (const auto& s : slices) {
        const CMat Xb = gather_fields(stage_in, perm, s.start, s.len);
        const VecI yb = gather_labels(train_labels, perm, s.start, s.len);
        const auto objective = [&](const Vec& v) {
          probe.set_flat_phases(v);
          return -photonic_stage_loss(probe, Xb, yb, prototypes, cfg.objective);
        };
        const Vec stepped = zoo::dd_step(objective, net.mesh(k).flat_phases(), dd, rng);
        net.mesh(k).commit_flat_phases(stepped);
        state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.unit_id = k;
      rec.objective = photonic_stage_loss(net.mesh(k), stage_in, train_labels, prototypes,
                                          cfg.objective);
      if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
        rec.metric = photonic_accuracy(net, bank, test_fields, test_labels);
      }
      rec.eval_count = state.eval_count;
      rec.seconds = state.elapsed();
      result.log.records.push_back(rec);
    }
    if (k + 1 < net.num_meshes()) {
      for (Index i = 0; i < n; ++i) {
        stage_in.col(i) = net.activation()(net.mesh(k).forward(stage_in.col(i)));
      }
    }
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = net.num_meshes() * cfg.epochs;
  return result;
}

PhotonicResult train_bp_dd_photonic(const photonic::MeshNetwork& net0, int num_classes,
                                    const CMat& train_fields, const VecI& train_labels,
                                    const CMat& test_fields, const VecI& test_labels,
                                    const RunConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.regime != Regime::kBpDd) {
    throw std::invalid_argument("train_bp_dd_photonic: config selects a different regime");
  }
  if (num_classes < 2 || num_classes > net0.ports()) {
    throw std::invalid_argument("train_bp_dd_photonic: class count must fit the output ports");
  }

  PhotonicResult result{net0, {}};
  auto& net = result.net;
  photonic::MeshNetwork probe = net0;
  RunState state;
  const zoo::DDConfig dd = dd_config(cfg);
  const Index n = train_fields.cols();
  const auto slices = batch_slices(n, cfg.batch_size);

  const auto batch_ce = [&](const photonic::MeshNetwork& trial, const CMat& Xb,
                            const VecI& yb) {
    Mat logits(num_classes, Xb.cols());
    for (Index i = 0; i < Xb.cols(); ++i) {
      logits.col(i) = photonic::intensity_readout(trial.forward(Xb.col(i))).head(num_classes);
    }
    return nn::cross_entropy_loss(logits, yb);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (const auto& s : slices) {
      const CMat Xb = gather_fields(train_fields, perm, s.start, s.len);
      const VecI yb = gather_labels(train_labels, perm, s.start, s.len);
      const auto objective = [&](const Vec& v) {
        probe.set_flat_phases(v);
        return -batch_ce(probe, Xb, yb);
      };
      const Vec stepped = zoo::dd_step(objective, net.flat_phases(), dd, rng);
      net.commit_flat_phases(stepped);
      state.eval_count += 2 * static_cast<std::uint64_t>(cfg.directions);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.unit_id = -1;
    rec.objective = batch_ce(net, train_fields, train_labels);
    if (should_eval(epoch, cfg.epochs, cfg.eval_stride)) {
      rec.metric = photonic_bp_accuracy(net, num_classes, test_fields, test_labels);
    }
    rec.eval_count = state.eval_count;
    rec.seconds = state.elapsed();
    result.log.records.push_back(rec);
  }
  result.log.total_evals = state.eval_count;
  result.log.total_seconds = state.elapsed();
  result.log.epochs_per_unit = cfg.epochs;
  result.log.total_unit_epochs = cfg.epochs;
  return result;
}

void write_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  out << "epoch,unit_id,objective,metric,eval_count,seconds\n";
  for (const auto& rec : log.records) {
    out << rec.epoch << "," << rec.unit_id << "," << rec.objective << "," << rec.metric << ","
        << rec.eval_count << "," << rec.seconds << "\n";
  }
}

void write_manifest(const RunConfig& cfg, const TrainLog& log, const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& extras) {
  nlohmann::json j;
  j["version"] = kVersionString;
  j["regime"] = regime_name(cfg.regime);
  j["task"] = cfg.task == nn::TaskKind::kClassification ? "classification" : "regression";
  j["learning_rate"] = cfg.learning_rate;
  j["epsilon"] = cfg.epsilon;
  j["directions"] = cfg.directions;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["margin"] = cfg.objective.margin;
  j["alpha"] = cfg.objective.alpha;
  j["objective_mode"] =
      cfg.objective.mode == ObjectiveMode::kMargin ? "margin" : "alpha_weighted";
  j["eval_stride"] = cfg.eval_stride;
  j["epochs_per_unit"] = log.epochs_per_unit;
  j["total_unit_epochs"] = log.total_unit_epochs;
  j["total_evals"] = log.total_evals;
  j["total_seconds"] = log.total_seconds;
  for (const auto& [key, value] : extras) j[key] = value;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace ffzo::train
