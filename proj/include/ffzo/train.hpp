#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ffzo/data.hpp"
#include "ffzo/infer.hpp"
#include "ffzo/nn.hpp"
#include "ffzo/photonic.hpp"
#include "ffzo/types.hpp"

// The four training regimes. Layer-local (ff_*) training walks the units in
// forward order, freezing everything behind; global (bp_*) training moves
// all parameters against one loss. The gradient source is either zeroth
// order (dd: paired directional probes) or the hand-derived exact
// gradients (ad, dense models only).

namespace ffzo::train {

enum class Regime { kFfDd, kFfAd, kBpDd, kBpAd };

std::string regime_name(Regime r);
Regime parse_regime(const std::string& name);

struct RunConfig {
  Regime regime = Regime::kFfDd;
  nn::TaskKind task = nn::TaskKind::kClassification;
  double learning_rate = 0.001;  // lambda
  double epsilon = 0.001;        // DD probe step
  int directions = 1;            // P
  Index batch_size = 256;
  int epochs = 100;
  std::uint64_t seed = 0;
  ClassificationObjectiveConfig objective;  // margin q / alpha weighting
  // Epochs between test-metric evaluations; 0 evaluates only after the
  // final epoch. The objective is recorded every epoch regardless.
  int eval_stride = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;     // within the unit for ff_*, within the run for bp_*
  int unit_id = -1;  // -1 for global regimes
  // Training criterion in loss form over the full train split at epoch
  // end (margin loss / negated alpha objective / squared goodness error /
  // cross-entropy / MSE).
  double objective = 0.0;
  // Test accuracy or R^2; NaN on epochs skipped by eval_stride.
  double metric = std::numeric_limits<double>::quiet_NaN();
  // Cumulative optimizer probes: 2P per DD step, 1 per exact-gradient step.
  std::uint64_t eval_count = 0;
  double seconds = 0.0;  // cumulative wall time
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::uint64_t total_evals = 0;
  double total_seconds = 0.0;
  // Both epoch accountings: every unit trains for epochs_per_unit, so a
  // layer-local run spends units x epochs_per_unit unit-epochs total.
  int epochs_per_unit = 0;
  int total_unit_epochs = 0;
};

struct TrainResult {
  nn::Model model;
  TrainLog log;
};

// Shared bookkeeping across the units of one run.
struct RunState {
  std::uint64_t eval_count = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

/// Trains one unit in place for cfg.epochs while everything else stays
/// untouched; the unit's objective reads stages up to the unit only.
/// Exposed so tests can audit freezing and locality directly.
std::vector<EpochRecord> train_ff_unit_classification(
    nn::Model& m, std::size_t unit_index, const infer::PrototypeBank& bank,
    const data::DatasetSplit& train_split, const data::DatasetSplit& test_split,
    const RunConfig& cfg, Rng& rng, RunState& state);
std::vector<EpochRecord> train_ff_unit_regression(
    nn::Model& m, std::size_t unit_index, const infer::RegressionBank& bank,
    const data::DatasetSplit& train_split, const data::DatasetSplit& test_split,
    const RunConfig& cfg, Rng& rng, RunState& state);

/// Units in forward order, each for cfg.epochs; earlier units frozen at
/// their trained values, later units untouched and unread.
TrainResult train_ff_classification(const nn::Model& m0, const infer::PrototypeBank& bank,
                                    const data::DatasetSplit& train_split,
                                    const data::DatasetSplit& test_split, const RunConfig& cfg,
                                    Rng& rng);
TrainResult train_ff_regression(const nn::Model& m0, const infer::RegressionBank& bank,
                                const data::DatasetSplit& train_split,
                                const data::DatasetSplit& test_split, const RunConfig& cfg,
                                Rng& rng);

/// One flat parameter vector over every unit; each batch takes a dd_step
/// against the global loss (cross-entropy or MSE by cfg.task).
TrainResult train_bp_dd(const nn::Model& m0, const data::DatasetSplit& train_split,
                        const data::DatasetSplit& test_split, const RunConfig& cfg, Rng& rng);

/// Exact-gradient descent on the global loss; dense models only.
TrainResult train_bp_ad(const nn::Model& m0, const data::DatasetSplit& train_split,
                        const data::DatasetSplit& test_split, const RunConfig& cfg, Rng& rng);

// ---- Photonic regimes ------------------------------------------------------

/// One prototype set per mesh, in port-intensity space.
struct PhotonicBank {
  std::vector<Mat> per_mesh;  // ports x num_classes
};

PhotonicBank make_photonic_bank(const photonic::MeshNetwork& net, int num_classes, Rng& rng);

/// Per-mesh goodness votes with the standard majority/tie policy.
infer::Prediction photonic_predict(const photonic::MeshNetwork& net, const PhotonicBank& bank,
                                   const CVec& encoded);
double photonic_accuracy(const photonic::MeshNetwork& net, const PhotonicBank& bank,
                         const CMat& fields, const VecI& labels);
/// Head reading for the global baseline: argmax over the intensities of the
/// first num_classes output ports.
double photonic_bp_accuracy(const photonic::MeshNetwork& net, int num_classes,
                            const CMat& fields, const VecI& labels);

struct PhotonicResult {
  photonic::MeshNetwork net;
  TrainLog log;
};

/// Meshes as units, in order: zeroth-order steps on one mesh's phases
/// against its intensity-goodness objective, upstream meshes frozen.
/// Phases wrap into canonical ranges after every committed step. The
/// nonlinearity between meshes is only ever called forward.
PhotonicResult train_ff_photonic(const photonic::MeshNetwork& net0, const PhotonicBank& bank,
                                 const CMat& train_fields, const VecI& train_labels,
                                 const CMat& test_fields, const VecI& test_labels,
                                 const RunConfig& cfg, Rng& rng);

/// Global zeroth-order training of all phases against cross-entropy on the
/// first num_classes port intensities.
PhotonicResult train_bp_dd_photonic(const photonic::MeshNetwork& net0, int num_classes,
                                    const CMat& train_fields, const VecI& train_labels,
                                    const CMat& test_fields, const VecI& test_labels,
                                    const RunConfig& cfg, Rng& rng);

// ---- Run artifacts ---------------------------------------------------------

inline constexpr const char* kVersionString = "ffzo-0.1.0";

/// CSV: epoch, unit_id, objective, metric, eval_count, seconds.
void write_log_csv(const TrainLog& log, const std::string& path);

/// JSON manifest: the full RunConfig, version string, both epoch
/// accountings, totals, and any caller-supplied extra fields (seeds of the
/// model, banks, and data pipeline).
void write_manifest(const RunConfig& cfg, const TrainLog& log, const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& extras = {});

}  // namespace ffzo::train
