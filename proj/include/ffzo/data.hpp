#pragma once

#include <stdexcept>
#include <string>

#include "ffzo/types.hpp"

// Dataset ingestion (IDX image format), the synthetic regression corpora,
// and a deterministic substitute digit corpus for offline runs.

namespace ffzo::data {

struct DatasetSplit {
  Mat inputs;   // dim x n, one column per sample
  VecI labels;  // classification labels (empty for regression splits)
  Vec targets;  // regression targets (empty for classification splits)
  std::string tag;  // "train" or "test"
  // Regression normalization metadata: targets are affine-mapped so the
  // noisy train extremes land on exactly [-1, 1].
  double y_min = 0.0, y_max = 0.0;

  Index size() const { return inputs.cols(); }
  Index dim() const { return inputs.rows(); }
  bool classification() const { return labels.size() > 0; }
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kCountMismatch };

  IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Big-endian IDX pair (magic 0x00000803 images / 0x00000801 labels);
/// pixels scaled to [0, 1]. Throws IdxError with a distinct kind for a bad
/// magic, a truncated payload, and an image/label count mismatch.
DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a classification split back out in the same format (pixels are
/// quantized to bytes).
void write_idx(const DatasetSplit& split, const std::string& images_path,
               const std::string& labels_path);

struct MnistPair {
  DatasetSplit train, test;
};

/// Loads the standard four-file layout from a directory.
MnistPair load_mnist_dir(const std::string& dir);

struct SyntheticSpec {
  int function_id = 1;  // 1: sin x1 + cos x2 (2d); 2: e^x1 sin x2 + x3 cos x4 - x5 x1 (5d)
  int input_dim = 2;
  Index n_total = 12000;
  Index n_train = 10000;
  Index n_test = 2000;
  double noise_fraction = 0.05;  // of the clean train target spread
  std::uint64_t seed = 0;

  void validate() const;
};

double synthetic_function(int function_id, const Vec& x);

struct SyntheticPair {
  DatasetSplit train, test;
  SyntheticSpec spec;
};

/// Inputs ~ U[-1,1]^d, clean targets, random permutation, train/test split,
/// Gaussian noise on train targets only (sigma = noise_fraction * clean
/// train std), then both splits normalized by the noisy train extremes.
/// Bit-reproducible for a fixed spec.
SyntheticPair generate_synthetic(const SyntheticSpec& spec, Rng& rng);

/// Map back to raw target units via the stored (y_min, y_max).
double denormalize(const DatasetSplit& split, double normalized);
Vec denormalize_targets(const DatasetSplit& split);

/// Digit labels k in 0..9 become regression targets 2k/9 - 1.
DatasetSplit mnist_as_regression(const DatasetSplit& split);

/// Seeded subsample without replacement; class-stratified (largest
/// remainder, so per-class counts deviate by at most 1 from the exact
/// proportion) for classification splits.
DatasetSplit subsample(const DatasetSplit& split, Index n, Rng& rng);

/// Synthetic-corpus archival: CSV (x0..x{d-1},y) plus a JSON sidecar at
/// <path>.json carrying the SyntheticSpec and normalization metadata.
void save_synthetic_csv(const SyntheticPair& pair, const std::string& train_path,
                        const std::string& test_path);
SyntheticPair load_synthetic_csv(const std::string& train_path, const std::string& test_path);

/// Deterministic stand-in digit corpus in MNIST file layout: stroke
/// skeletons per digit class, random affine jitter, soft-edge rendering,
/// pixel noise. Writes the standard four files into dir.
void generate_digit_idx(const std::string& dir, Index n_train, Index n_test,
                        std::uint64_t seed);

/// One rendered digit as a flat 784-vector in [0, 1] (row-major pixels).
Vec render_digit(int digit, Rng& rng);

}  // namespace ffzo::data
