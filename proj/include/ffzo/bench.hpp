#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ffzo/config.hpp"
#include "ffzo/data.hpp"
#include "ffzo/infer.hpp"
#include "ffzo/io.hpp"
#include "ffzo/nn.hpp"
#include "ffzo/photonic.hpp"
#include "ffzo/train.hpp"
#include "ffzo/types.hpp"

namespace ffzo::bench {

// ---- Sweep cells -----------------------------------------------------------

/// One fully resolved benchmark run. Every field participates in the cell's
/// identity: the canonical key string drives resume-by-hash and the
/// regenerate-from-manifest check.
struct CellConfig {
  std::string dataset = "mnist";  // mnist | digits | synth1 | synth2 | mnist_reg
  std::string arch = "mlp";       // mlp | cnn | photonic
  std::string scale = "desk";     // desk | paper
  int depth = 1;                  // mlp hidden depth / photonic mesh count / cnn conv stages
  int width = 100;                // mlp hidden width / cnn channels / photonic ports
  train::Regime regime = train::Regime::kFfDd;
  int directions = 1;
  unsigned long long seed = 0;
  unsigned long long data_seed = 1234;
  int classes = 10;
  int epochs = 20;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double epsilon = 1e-3;
  double margin = 0.3;
  double alpha = -1.0;            // <= 0 resolves to (classes - 1)
  std::string objective = "margin";  // margin | alpha

  bool regression() const {
    return dataset == "synth1" || dataset == "synth2" || dataset == "mnist_reg";
  }
  /// Canonical "k=v;..." identity string.
  std::string key() const;
  /// FNV-1a hash of key(), 16 hex digits; names the cell's manifest.
  std::string hash_hex() const;
};

struct CellResult {
  CellConfig config;
  bool ok = false;
  bool skipped = false;  // satisfied from an existing manifest, zero training
  std::string error;
  long long param_count = 0;
  double metric = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t eval_count = 0;
  double seconds = 0.0;
};

// ---- Plans -----------------------------------------------------------------

/// Cross product of sweep axes; every (axis point x regime x seed) cell is
/// independent.
struct ExperimentPlan {
  std::string dataset = "mnist";
  std::string arch = "mlp";
  std::string scale = "desk";
  std::string out_dir = "bench_out";
  std::vector<int> depths{1};
  std::vector<int> widths{100};
  std::vector<int> directions{1};
  std::vector<train::Regime> regimes{train::Regime::kFfDd};
  std::vector<unsigned long long> seeds{0};
  int classes = 10;
  unsigned long long data_seed = 1234;
  // -1 resolves to the scale preset.
  int epochs = -1;
  int batch_size = -1;
  double learning_rate = 1e-3;
  double epsilon = 1e-3;
  double margin = 0.3;
  double alpha = -1.0;
  std::string objective = "margin";
  bool save_models = false;

  void validate() const;
  std::vector<CellConfig> cells() const;
};

/// Sections: [plan] (dataset, arch, scale, out, depths, widths, directions,
/// regimes, seeds, classes, data_seed, save_models) and [train] (epochs,
/// batch_size, learning_rate, epsilon, margin, objective, alpha). Every
/// training knob defaults to the published configuration for the scale.
ExperimentPlan plan_from_config(const cfg::Config& config);

int resolved_epochs(const ExperimentPlan& plan);
int resolved_batch_size(const ExperimentPlan& plan);

// ---- Architecture plumbing -------------------------------------------------

/// Two conv blocks (kernel 6x6, pad 2, stride 1, pool 2/2) and a dense
/// readout; both conv stages carry `channels` output channels.
nn::ModelSpec cnn_classification_spec(int in_h, int in_w, int channels, int num_classes,
                                      int proj_dim = 10);

/// Model spec for a non-photonic cell given the resolved input dimension.
nn::ModelSpec cell_model_spec(const CellConfig& cell, int input_dim, int num_classes);

/// Exact trainable-scalar count of a spec: weights and biases only; frozen
/// projections and prototypes are excluded. Equals the length of the global
/// flat parameter vector.
long long param_count(const nn::ModelSpec& spec);
/// 3 phases per cell, d(d-1)/2 cells per mesh.
long long photonic_param_count(int ports, int meshes);

// ---- Data resolution -------------------------------------------------------

/// Where image data comes from: a real IDX directory named by FFZO_MNIST_DIR,
/// or the bundled procedural digit corpus rendered under `root`.
std::string resolve_image_dir(const std::string& root, Index n_train, Index n_test,
                              unsigned long long seed);

struct CellData {
  data::DatasetSplit train;
  data::DatasetSplit test;
  // Photonic cells additionally carry encoded fields.
  CMat train_fields, test_fields;
  VecI train_labels, test_labels;
};

/// Loads, subsamples, and (for photonic cells) encodes the dataset a cell
/// needs. `root` hosts generated corpora; the result is deterministic in
/// (dataset, scale, arch, classes, width, data_seed).
CellData resolve_cell_data(const CellConfig& cell, const std::string& root);

// ---- Running ---------------------------------------------------------------

/// Trains one cell from scratch. Never throws: failures come back with
/// ok = false and the reason in `error`. The overload fills `saved` with the
/// trained model and its bank for layer-local cells (the only ones whose
/// readout state lives outside the model).
CellResult run_cell(const CellConfig& cell, const CellData& data);
CellResult run_cell(const CellConfig& cell, const CellData& data, io::Checkpoint* saved);

/// Executes all cells, newest results merged with manifests already in
/// plan.out_dir (matching cells are skipped, so a completed plan reruns with
/// zero training). Writes results.csv, manifest.json, and one JSON manifest
/// per cell under cells/.
std::vector<CellResult> run_plan(const ExperimentPlan& plan);

/// Identical runs varying only the direction count.
std::vector<CellResult> direction_sweep(ExperimentPlan base, const std::vector<int>& p_values);

// ---- Manifests and tables --------------------------------------------------

void write_cell_manifest(const CellResult& result, const std::string& path);
CellResult read_cell_manifest(const std::string& path);
/// Re-trains the manifest's cell from its recorded config; `root` as in
/// resolve_cell_data.
CellResult regenerate_cell(const std::string& manifest_path, const std::string& root);

/// dataset,arch,depth,width,regime,P,seed,param_count,metric,eval_count,seconds
void write_results_csv(const std::vector<CellResult>& results, const std::string& path);

// ---- Embedding export ------------------------------------------------------

/// Per-unit goodness-tap vectors for external projection tools. Row format:
///   kind,sample,unit,label,v0,v1,...
/// "tap" rows carry one tap per (sample, unit); "prototype" rows follow with
/// every readout direction per unit (class index in the label column,
/// regression bounds labelled -1 and +1).
void export_embeddings(const nn::Model& m, const infer::PrototypeBank* class_bank,
                       const infer::RegressionBank* regression_bank,
                       const data::DatasetSplit& split, Index max_samples,
                       const std::string& path);

struct EmbeddingRow {
  std::string kind;
  Index sample = -1;
  int unit = 0;
  double label = 0.0;
  Vec values;
};

std::vector<EmbeddingRow> parse_embeddings(const std::string& path);

}  // namespace ffzo::bench
