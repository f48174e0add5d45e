#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ffzo/goodness.hpp"
#include "ffzo/types.hpp"

// Forward-evaluation engine: dense and convolutional stages, black-box
// activations, max pooling, frozen random channel projections, and the
// hand-derived exact gradients for dense networks.

namespace ffzo::nn {

enum class StageKind { kDense, kConv, kActivation, kMaxPool, kFlatten };
enum class TaskKind { kClassification, kRegression };

struct StageSpec {
  StageKind kind = StageKind::kDense;

  // kDense
  int out_dim = 0;

  // kConv
  int out_channels = 0;
  int kernel_h = 0, kernel_w = 0;
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dilation_h = 1, dilation_w = 1;
  int proj_dim = 0;  // per-channel goodness tap size

  // kActivation
  std::string activation = "relu";
  double dropout = 0.0;  // inverted dropout, training forwards only

  // kMaxPool
  int pool_size = 2, pool_stride = 2;
};

struct ModelSpec {
  std::vector<StageSpec> stages;
  // Flat input when input_channels == 0, else channels x height x width.
  int input_dim = 0;
  int input_channels = 0, input_h = 0, input_w = 0;
  TaskKind task = TaskKind::kClassification;
  int num_classes = 0;

  bool conv_input() const { return input_channels > 0; }
};

// Shape of the tensor flowing between stages.
struct ShapeInfo {
  bool spatial = false;
  int channels = 0, h = 0, w = 0;
  int flat = 0;  // valid when !spatial

  int size() const { return spatial ? channels * h * w : flat; }
};

/// Per-boundary shapes: entry s is the input of stage s, the last entry is
/// the final output. Throws on any inconsistency (dense on spatial input,
/// non-positive conv output dims, pooling smaller than its window, ...).
std::vector<ShapeInfo> infer_shapes(const ModelSpec& spec);

/// Conv output extent along one axis; floor semantics.
int conv_out_extent(int in, int kernel, int stride, int pad, int dilation);
/// Pool output extent along one axis; trailing rows/cols that do not fill a
/// window are dropped.
int pool_out_extent(int in, int size, int stride);

struct DenseLayer {
  Mat W;  // out_dim x in_dim
  Vec b;  // out_dim
};

struct ConvLayer {
  std::vector<std::vector<Mat>> kernels;  // [out_channel][in_channel], K_h x K_w
  Vec bias;                               // out_channels
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dilation_h = 1, dilation_w = 1;
};

// One feature map per channel.
using FeatureMaps = std::vector<Mat>;

struct Stage {
  StageSpec spec;
  DenseLayer dense;              // kind == kDense
  ConvLayer conv;                // kind == kConv
  std::vector<Mat> projections;  // kind == kConv: frozen, one per out channel
};

/// A training unit: a whole dense layer, or one conv output channel.
struct UnitRef {
  int stage = 0;
  int channel = -1;  // -1 for dense units

  bool operator==(const UnitRef&) const = default;
};

class Model {
 public:
  Model() = default;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<Stage>& stages() { return stages_; }
  const std::vector<ShapeInfo>& shapes() const { return shapes_; }

  /// Trainable units in forward order; conv channels enumerate 0..C-1
  /// within their stage.
  const std::vector<UnitRef>& units() const { return units_; }

  /// Dimension of the goodness tap of a unit: the dense out_dim, or the
  /// conv channel's projection size.
  int tap_dim(const UnitRef& u) const;

  Index unit_param_count(const UnitRef& u) const;
  Index global_param_count() const;

  /// Flat parameter layout: dense = column-major W then b; conv channel =
  /// per-in-channel column-major kernel then the channel bias. The global
  /// vector concatenates units in units() order.
  Vec unit_flat(const UnitRef& u) const;
  void set_unit_flat(const UnitRef& u, const Vec& values);
  Vec global_flat() const;
  void set_global_flat(const Vec& values);

  friend Model build_model(const ModelSpec& spec);

 private:
  ModelSpec spec_;
  std::vector<Stage> stages_;
  std::vector<ShapeInfo> shapes_;
  std::vector<UnitRef> units_;
};

/// Validate a ModelSpec and allocate a model with all parameters zero.
Model build_model(const ModelSpec& spec);

/// Build and randomize: weights ~ U(-s, s) with s = sqrt(1/fan_in) (conv
/// fan_in = C_in*K_h*K_w), biases 0, projections ~ N(0, sd 1/sqrt(d_proj)).
/// Identical seeds give bit-identical models.
Model init_parameters(const ModelSpec& spec, Rng& rng);

struct ForwardOpts {
  bool train = false;            // enables dropout stages
  std::uint64_t dropout_seed = 0;  // per-batch seed so DD twins see one mask
};

// Activation registry. FF trainers treat entries as black boxes and never
// ask for derivatives; exact dense gradients are restricted to relu.
using ActivationFn = std::function<void(Mat&)>;
void register_activation(const std::string& name, ActivationFn fn);
const ActivationFn& find_activation(const std::string& name);

Vec dense_forward(const DenseLayer& layer, const Vec& x);
Mat dense_forward_batch(const DenseLayer& layer, const Mat& X);

/// Padded im2col patch matrix: one column per output pixel (column-major
/// pixel order), rows ordered in-channel-major then kernel-column-major to
/// match the flat kernel layout.
Mat im2col(const ConvLayer& layer, const FeatureMaps& x, int h_out, int w_out);

FeatureMaps conv_forward(const ConvLayer& layer, const FeatureMaps& x);
FeatureMaps max_pool(const FeatureMaps& x, int size, int stride);

/// z_tilde = A * flatten(channel), with the frozen projection A.
Vec project_channel(const Mat& projection, const Mat& z_channel);

/// Column-major per channel, channels concatenated.
Vec flatten(const FeatureMaps& x);
/// Inverse of the dataset's row-major pixel layout into H x W maps.
FeatureMaps to_feature_maps(const Vec& x, int channels, int h, int w);

struct ForwardResult {
  std::vector<Vec> taps;  // aligned with model.units()
  Vec output;             // final stage output, flattened if spatial
};

/// Full forward pass collecting every unit's goodness tap: dense taps are
/// the pre-activation z, conv taps the per-channel projected z-tilde
/// (pre-activation, pre-pool).
ForwardResult forward_with_taps(const Model& m, const Vec& x, const ForwardOpts& opts = {});

// Dense-only batched paths (columns are samples).
struct BatchForwardResult {
  std::vector<Mat> taps;  // aligned with model.units()
  Mat output;
};
BatchForwardResult forward_with_taps_batch(const Model& m, const Mat& X,
                                           const ForwardOpts& opts = {});
Mat forward_batch(const Model& m, const Mat& X, const ForwardOpts& opts = {});

/// Activations feeding stage `stage_end` for every column of X (dense-only
/// path): applies stages [0, stage_end).
Mat forward_prefix(const Model& m, const Mat& X, int stage_end, const ForwardOpts& opts = {});

/// Conv-path prefix for one sample.
FeatureMaps forward_prefix_maps(const Model& m, const Vec& x, int stage_end,
                                const ForwardOpts& opts = {});

/// Prefix for one sample of any model, valid when the flow is flat at
/// `stage_end` (after the flatten of a conv model, or anywhere in a dense
/// one). Throws when the boundary is still spatial.
Vec forward_prefix_flat(const Model& m, const Vec& x, int stage_end,
                        const ForwardOpts& opts = {});

bool is_dense_only(const ModelSpec& spec);

// ---- Exact gradients for dense networks ----------------------------------

struct UnitGrad {
  Mat dW;
  Vec db;
};

/// Softmax cross-entropy over logits, batch-mean; the hand-derived chain
/// rule matches per-parameter central differences to 1e-5 relative L2.
/// Dense/relu stages only; dropout unsupported here.
std::vector<UnitGrad> backprop_cross_entropy(const Model& m, const Mat& X, const VecI& labels);

/// MSE (mean over batch and output dims) gradients, same restrictions.
std::vector<UnitGrad> backprop_mse(const Model& m, const Mat& X, const Mat& targets);

/// Gradient of one dense unit's local classification loss (mean margin loss
/// or negated alpha objective over the batch) with respect to that unit's
/// own parameters; Xprefix holds the frozen upstream activations.
UnitGrad backprop_layer_goodness_classification(const DenseLayer& layer, const Mat& Xprefix,
                                                const VecI& labels, const Mat& prototypes,
                                                const ClassificationObjectiveConfig& cfg);

/// Gradient of one dense unit's local regression loss, mean (g - y)^2.
UnitGrad backprop_layer_goodness_regression(const DenseLayer& layer, const Mat& Xprefix,
                                            const Vec& targets, const Vec& upper_prototype);

// Loss values matching the gradients above.
double cross_entropy_loss(const Mat& logits, const VecI& labels);
double mse_loss(const Mat& pred, const Mat& target);

// ---- Common architectures -------------------------------------------------

/// depth x [Dense(width), relu] followed by a Dense(num_classes) head.
ModelSpec mlp_classification_spec(int input_dim, int width, int depth, int num_classes);

/// depth x [Dense(width), relu]; layer-local regression reads the last
/// unit's goodness, so no scalar head.
ModelSpec mlp_regression_ff_spec(int input_dim, int width, int depth);

/// depth x [Dense(width), relu] plus a Dense(1) head for the global-loss
/// baselines.
ModelSpec mlp_regression_bp_spec(int input_dim, int width, int depth);

}  // namespace ffzo::nn
