#include "ffzo/nn.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace ffzo::nn {

int conv_out_extent(int in, int kernel, int stride, int pad, int dilation) {
  // Floor semantics even when the window overruns the padded input, so
  // callers can detect non-positive extents.
  const int span = in + 2 * pad - dilation * (kernel - 1) - 1;
  const int q = span >= 0 ? span / stride : -((-span + stride - 1) / stride);
  return q + 1;
}

int pool_out_extent(int in, int size, int stride) {
  if (in < size) return 0;
  return (in - size) / stride + 1;
}

std::vector<ShapeInfo> infer_shapes(const ModelSpec& spec) {
  std::vector<ShapeInfo> shapes;
  ShapeInfo cur;
  if (spec.conv_input()) {
    if (spec.input_h < 1 || spec.input_w < 1)
      throw std::invalid_argument("infer_shapes: bad spatial input dims");
    cur = {true, spec.input_channels, spec.input_h, spec.input_w, 0};
  } else {
    if (spec.input_dim < 1) throw std::invalid_argument("infer_shapes: bad input dim");
    cur = {false, 0, 0, 0, spec.input_dim};
  }
  shapes.push_back(cur);
  for (const StageSpec& s : spec.stages) {
    switch (s.kind) {
      case StageKind::kDense:
        if (cur.spatial)
          throw std::invalid_argument("infer_shapes: dense stage on spatial input (flatten first)");
        if (s.out_dim < 1) throw std::invalid_argument("infer_shapes: dense out_dim < 1");
        cur.flat = s.out_dim;
        break;
      case StageKind::kConv: {
        if (!cur.spatial) throw std::invalid_argument("infer_shapes: conv stage on flat input");
        if (s.out_channels < 1 || s.kernel_h < 1 || s.kernel_w < 1 || s.stride_h < 1 ||
            s.stride_w < 1 || s.dilation_h < 1 || s.dilation_w < 1 || s.pad_h < 0 || s.pad_w < 0)
          throw std::invalid_argument("infer_shapes: bad conv geometry");
        const int h = conv_out_extent(cur.h, s.kernel_h, s.stride_h, s.pad_h, s.dilation_h);
        const int w = conv_out_extent(cur.w, s.kernel_w, s.stride_w, s.pad_w, s.dilation_w);
        if (h < 1 || w < 1) throw std::invalid_argument("infer_shapes: non-positive conv output");
        if (s.proj_dim < 1) throw std::invalid_argument("infer_shapes: conv stage needs proj_dim");
        cur.channels = s.out_channels;
        cur.h = h;
        cur.w = w;
        break;
      }
      case StageKind::kActivation:
        break;  // shape preserved
      case StageKind::kMaxPool: {
        if (!cur.spatial) throw std::invalid_argument("infer_shapes: pool stage on flat input");
        const int h = pool_out_extent(cur.h, s.pool_size, s.pool_stride);
        const int w = pool_out_extent(cur.w, s.pool_size, s.pool_stride);
        if (h < 1 || w < 1) throw std::invalid_argument("infer_shapes: non-positive pool output");
        cur.h = h;
        cur.w = w;
        break;
      }
      case StageKind::kFlatten:
        if (!cur.spatial) throw std::invalid_argument("infer_shapes: flatten on flat input");
        cur = {false, 0, 0, 0, cur.channels * cur.h * cur.w};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

bool is_dense_only(const ModelSpec& spec) {
  if (spec.conv_input()) return false;
  for (const StageSpec& s : spec.stages)
    if (s.kind != StageKind::kDense && s.kind != StageKind::kActivation) return false;
  return true;
}

int Model::tap_dim(const UnitRef& u) const {
  const StageSpec& s = stages_[static_cast<size_t>(u.stage)].spec;
  return s.kind == StageKind::kDense ? s.out_dim : s.proj_dim;
}

Index Model::unit_param_count(const UnitRef& u) const {
  const Stage& st = stages_[static_cast<size_t>(u.stage)];
  if (st.spec.kind == StageKind::kDense) return st.dense.W.size() + st.dense.b.size();
  const auto& kernels = st.conv.kernels[static_cast<size_t>(u.channel)];
  Index n = 1;  // channel bias
  for (const Mat& k : kernels) n += k.size();
  return n;
}

Index Model::global_param_count() const {
  Index n = 0;
  for (const UnitRef& u : units_) n += unit_param_count(u);
  return n;
}

Vec Model::unit_flat(const UnitRef& u) const {
  const Stage& st = stages_[static_cast<size_t>(u.stage)];
  Vec out(unit_param_count(u));
  if (st.spec.kind == StageKind::kDense) {
    const Index wn = st.dense.W.size();
    out.head(wn) = Eigen::Map<const Vec>(st.dense.W.data(), wn);
    out.tail(st.dense.b.size()) = st.dense.b;
  } else {
    Index off = 0;
    for (const Mat& k : st.conv.kernels[static_cast<size_t>(u.channel)]) {
      out.segment(off, k.size()) = Eigen::Map<const Vec>(k.data(), k.size());
      off += k.size();
    }
    out[off] = st.conv.bias[u.channel];
  }
  return out;
}

void Model::set_unit_flat(const UnitRef& u, const Vec& values) {
  if (values.size() != unit_param_count(u))
    throw std::invalid_argument("set_unit_flat: size mismatch");
  Stage& st = stages_[static_cast<size_t>(u.stage)];
  if (st.spec.kind == StageKind::kDense) {
    const Index wn = st.dense.W.size();
    Eigen::Map<Vec>(st.dense.W.data(), wn) = values.head(wn);
    st.dense.b = values.tail(st.dense.b.size());
  } else {
    Index off = 0;
    for (Mat& k : st.conv.kernels[static_cast<size_t>(u.channel)]) {
      Eigen::Map<Vec>(k.data(), k.size()) = values.segment(off, k.size());
      off += k.size();
    }
    st.conv.bias[u.channel] = values[off];
  }
}

Vec Model::global_flat() const {
  Vec out(global_param_count());
  Index off = 0;
  for (const UnitRef& u : units_) {
    const Vec v = unit_flat(u);
    out.segment(off, v.size()) = v;
    off += v.size();
  }
  return out;
}

void Model::set_global_flat(const Vec& values) {
  if (values.size() != global_param_count())
    throw std::invalid_argument("set_global_flat: size mismatch");
  Index off = 0;
  for (const UnitRef& u : units_) {
    const Index n = unit_param_count(u);
    set_unit_flat(u, values.segment(off, n));
    off += n;
  }
}

Model build_model(const ModelSpec& spec) {
  Model m;
  m.spec_ = spec;
  m.shapes_ = infer_shapes(spec);
  for (int si = 0; si < static_cast<int>(spec.stages.size()); ++si) {
    const StageSpec& s = spec.stages[static_cast<size_t>(si)];
    const ShapeInfo& in = m.shapes_[static_cast<size_t>(si)];
    const ShapeInfo& out = m.shapes_[static_cast<size_t>(si) + 1];
    Stage st;
    st.spec = s;
    if (s.kind == StageKind::kDense) {
      st.dense.W = Mat::Zero(s.out_dim, in.flat);
      st.dense.b = Vec::Zero(s.out_dim);
      m.units_.push_back({si, -1});
    } else if (s.kind == StageKind::kConv) {
      st.conv.kernels.assign(static_cast<size_t>(s.out_channels),
                             std::vector<Mat>(static_cast<size_t>(in.channels),
                                              Mat::Zero(s.kernel_h, s.kernel_w)));
      st.conv.bias = Vec::Zero(s.out_channels);
      st.conv.stride_h = s.stride_h;
      st.conv.stride_w = s.stride_w;
      st.conv.pad_h = s.pad_h;
      st.conv.pad_w = s.pad_w;
      st.conv.dilation_h = s.dilation_h;
      st.conv.dilation_w = s.dilation_w;
      st.projections.assign(static_cast<size_t>(s.out_channels),
                            Mat::Zero(s.proj_dim, out.h * out.w));
      for (int c = 0; c < s.out_channels; ++c) m.units_.push_back({si, c});
    } else if (s.kind == StageKind::kActivation) {
      find_activation(s.activation);  // must exist
      if (s.dropout < 0.0 || s.dropout >= 1.0)
        throw std::invalid_argument("build_model: dropout outside [0, 1)");
    }
    m.stages_.push_back(std::move(st));
  }
  if (m.units_.empty()) throw std::invalid_argument("build_model: no trainable stages");
  return m;
}

Model init_parameters(const ModelSpec& spec, Rng& rng) {
  Model m = build_model(spec);
  for (Stage& st : m.stages()) {
    if (st.spec.kind == StageKind::kDense) {
      const double s = std::sqrt(1.0 / static_cast<double>(st.dense.W.cols()));
      for (Index j = 0; j < st.dense.W.cols(); ++j)
        for (Index i = 0; i < st.dense.W.rows(); ++i) st.dense.W(i, j) = rng.uniform(-s, s);
    } else if (st.spec.kind == StageKind::kConv) {
      const double fan_in = static_cast<double>(st.conv.kernels[0].size()) *
                            st.spec.kernel_h * st.spec.kernel_w;
      const double s = std::sqrt(1.0 / fan_in);
      for (auto& per_in : st.conv.kernels)
        for (Mat& k : per_in)
          for (Index j = 0; j < k.cols(); ++j)
            for (Index i = 0; i < k.rows(); ++i) k(i, j) = rng.uniform(-s, s);
      const double proj_sd = 1.0 / std::sqrt(static_cast<double>(st.spec.proj_dim));
      for (Mat& a : st.projections)
        for (Index j = 0; j < a.cols(); ++j)
          for (Index i = 0; i < a.rows(); ++i) a(i, j) = proj_sd * rng.normal();
    }
  }
  return m;
}

namespace {

std::map<std::string, ActivationFn>& activation_registry() {
  static std::map<std::string, ActivationFn> reg = {
      {"relu", [](Mat& x) { x = x.cwiseMax(0.0); }},
      {"identity", [](Mat&) {}},
  };
  return reg;
}

}  // namespace

void register_activation(const std::string& name, ActivationFn fn) {
  activation_registry()[name] = std::move(fn);
}

const ActivationFn& find_activation(const std::string& name) {
  const auto& reg = activation_registry();
  const auto it = reg.find(name);
  if (it == reg.end()) throw std::invalid_argument("unknown activation: " + name);
  return it->second;
}

Vec dense_forward(const DenseLayer& layer, const Vec& x) {
  if (x.size() != layer.W.cols()) throw std::invalid_argument("dense_forward: shape mismatch");
  return layer.W * x + layer.b;
}

Mat dense_forward_batch(const DenseLayer& layer, const Mat& X) {
  if (X.rows() != layer.W.cols())
    throw std::invalid_argument("dense_forward_batch: shape mismatch");
  return (layer.W * X).colwise() + layer.b;
}

Mat im2col(const ConvLayer& layer, const FeatureMaps& x, int h_out, int w_out) {
  const int c_in = static_cast<int>(x.size());
  const int k_h = static_cast<int>(layer.kernels[0][0].rows());
  const int k_w = static_cast<int>(layer.kernels[0][0].cols());
  const int h = static_cast<int>(x[0].rows());
  const int w = static_cast<int>(x[0].cols());
  Mat patches = Mat::Zero(static_cast<Index>(c_in) * k_h * k_w,
                          static_cast<Index>(h_out) * w_out);
  for (int ox = 0; ox < w_out; ++ox) {
    for (int oy = 0; oy < h_out; ++oy) {
      const Index col = static_cast<Index>(ox) * h_out + oy;
      for (int ic = 0; ic < c_in; ++ic) {
        for (int kx = 0; kx < k_w; ++kx) {
          const int ix = ox * layer.stride_w - layer.pad_w + kx * layer.dilation_w;
          if (ix < 0 || ix >= w) continue;
          for (int ky = 0; ky < k_h; ++ky) {
            const int iy = oy * layer.stride_h - layer.pad_h + ky * layer.dilation_h;
            if (iy < 0 || iy >= h) continue;
            patches(static_cast<Index>(ic) * k_h * k_w + kx * k_h + ky, col) =
                x[static_cast<size_t>(ic)](iy, ix);
          }
        }
      }
    }
  }
  return patches;
}

namespace {

// Flat kernel rows matching the im2col row order (in-channel major, then
// kernel column-major) and the unit_flat layout.
Mat kernel_matrix(const ConvLayer& layer) {
  const Index c_out = static_cast<Index>(layer.kernels.size());
  const Index c_in = static_cast<Index>(layer.kernels[0].size());
  const Index ks = layer.kernels[0][0].size();
  Mat km(c_in * ks, c_out);
  for (Index oc = 0; oc < c_out; ++oc)
    for (Index ic = 0; ic < c_in; ++ic)
      km.col(oc).segment(ic * ks, ks) = Eigen::Map<const Vec>(
          layer.kernels[static_cast<size_t>(oc)][static_cast<size_t>(ic)].data(), ks);
  return km;
}

}  // namespace

FeatureMaps conv_forward(const ConvLayer& layer, const FeatureMaps& x) {
  if (x.empty() || x.size() != layer.kernels[0].size())
    throw std::invalid_argument("conv_forward: channel count mismatch");
  const int h = static_cast<int>(x[0].rows());
  const int w = static_cast<int>(x[0].cols());
  const int k_h = static_cast<int>(layer.kernels[0][0].rows());
  const int k_w = static_cast<int>(layer.kernels[0][0].cols());
  const int h_out = conv_out_extent(h, k_h, layer.stride_h, layer.pad_h, layer.dilation_h);
  const int w_out = conv_out_extent(w, k_w, layer.stride_w, layer.pad_w, layer.dilation_w);
  if (h_out < 1 || w_out < 1) throw std::invalid_argument("conv_forward: non-positive output");
  const Mat patches = im2col(layer, x, h_out, w_out);
  const Mat out = patches.transpose() * kernel_matrix(layer);  // (H*W) x C_out
  FeatureMaps maps(layer.kernels.size());
  for (size_t oc = 0; oc < maps.size(); ++oc) {
    maps[oc] = Eigen::Map<const Mat>(out.col(static_cast<Index>(oc)).data(), h_out, w_out);
    maps[oc].array() += layer.bias[static_cast<Index>(oc)];
  }
  return maps;
}

FeatureMaps max_pool(const FeatureMaps& x, int size, int stride) {
  if (size < 1 || stride < 1) throw std::invalid_argument("max_pool: bad window");
  FeatureMaps out(x.size());
  for (size_t c = 0; c < x.size(); ++c) {
    const int h_out = pool_out_extent(static_cast<int>(x[c].rows()), size, stride);
    const int w_out = pool_out_extent(static_cast<int>(x[c].cols()), size, stride);
    if (h_out < 1 || w_out < 1) throw std::invalid_argument("max_pool: non-positive output");
    Mat m(h_out, w_out);
    for (int i = 0; i < h_out; ++i)
      for (int j = 0; j < w_out; ++j)
        m(i, j) = x[c].block(i * stride, j * stride, size, size).maxCoeff();
    out[c] = std::move(m);
  }
  return out;
}

Vec project_channel(const Mat& projection, const Mat& z_channel) {
  if (projection.cols() != z_channel.size())
    throw std::invalid_argument("project_channel: shape mismatch");
  return projection * Eigen::Map<const Vec>(z_channel.data(), z_channel.size());
}

Vec flatten(const FeatureMaps& x) {
  Index total = 0;
  for (const Mat& m : x) total += m.size();
  Vec out(total);
  Index off = 0;
  for (const Mat& m : x) {
    out.segment(off, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
    off += m.size();
  }
  return out;
}

FeatureMaps to_feature_maps(const Vec& x, int channels, int h, int w) {
  if (x.size() != static_cast<Index>(channels) * h * w)
    throw std::invalid_argument("to_feature_maps: size mismatch");
  FeatureMaps maps(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    Mat m(h, w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        m(i, j) = x[static_cast<Index>(c) * h * w + static_cast<Index>(i) * w + j];
    maps[static_cast<size_t>(c)] = std::move(m);
  }
  return maps;
}

namespace {

void apply_dropout(Mat& x, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i)
      x(i, j) = rng.uniform() < keep ? x(i, j) / keep : 0.0;
}

// The tensor flowing between stages of the general per-sample path.
struct Flow {
  bool spatial = false;
  FeatureMaps maps;
  Vec flat;
};

Flow run_stages(const Model& m, Flow flow, int stage_end, const ForwardOpts& opts,
                std::vector<Vec>* taps) {
  for (int si = 0; si < stage_end; ++si) {
    const Stage& st = m.stages()[static_cast<size_t>(si)];
    switch (st.spec.kind) {
      case StageKind::kDense: {
        flow.flat = dense_forward(st.dense, flow.flat);
        if (taps) taps->push_back(flow.flat);
        break;
      }
      case StageKind::kConv: {
        flow.maps = conv_forward(st.conv, flow.maps);
        if (taps)
          for (size_t oc = 0; oc < flow.maps.size(); ++oc)
            taps->push_back(project_channel(st.projections[oc], flow.maps[oc]));
        break;
      }
      case StageKind::kActivation: {
        const ActivationFn& fn = find_activation(st.spec.activation);
        const bool drop = opts.train && st.spec.dropout > 0.0;
        Rng drop_rng(substream_seed(opts.dropout_seed, static_cast<uint64_t>(si)));
        if (flow.spatial) {
          for (Mat& ch : flow.maps) {
            fn(ch);
            if (drop) apply_dropout(ch, st.spec.dropout, drop_rng);
          }
        } else {
          Mat tmp = flow.flat;
          fn(tmp);
          if (drop) apply_dropout(tmp, st.spec.dropout, drop_rng);
          flow.flat = tmp;
        }
        break;
      }
      case StageKind::kMaxPool:
        flow.maps = max_pool(flow.maps, st.spec.pool_size, st.spec.pool_stride);
        break;
      case StageKind::kFlatten:
        flow.flat = flatten(flow.maps);
        flow.maps.clear();
        flow.spatial = false;
        break;
    }
  }
  return flow;
}

Flow input_flow(const Model& m, const Vec& x) {
  Flow flow;
  if (m.spec().conv_input()) {
    flow.spatial = true;
    flow.maps = to_feature_maps(x, m.spec().input_channels, m.spec().input_h, m.spec().input_w);
  } else {
    if (x.size() != m.spec().input_dim)
      throw std::invalid_argument("forward: input size mismatch");
    flow.flat = x;
  }
  return flow;
}

}  // namespace

ForwardResult forward_with_taps(const Model& m, const Vec& x, const ForwardOpts& opts) {
  ForwardResult res;
  Flow flow = run_stages(m, input_flow(m, x), static_cast<int>(m.stages().size()), opts,
                         &res.taps);
  res.output = flow.spatial ? flatten(flow.maps) : flow.flat;
  return res;
}

FeatureMaps forward_prefix_maps(const Model& m, const Vec& x, int stage_end,
                                const ForwardOpts& opts) {
  Flow flow = run_stages(m, input_flow(m, x), stage_end, opts, nullptr);
  if (!flow.spatial)
    throw std::invalid_argument("forward_prefix_maps: flow is flat at this stage");
  return std::move(flow.maps);
}

Vec forward_prefix_flat(const Model& m, const Vec& x, int stage_end, const ForwardOpts& opts) {
  Flow flow = run_stages(m, input_flow(m, x), stage_end, opts, nullptr);
  if (flow.spatial)
    throw std::invalid_argument("forward_prefix_flat: flow is still spatial at this stage");
  return std::move(flow.flat);
}

namespace {

void require_dense_path(const Model& m) {
  if (!is_dense_only(m.spec()))
    throw std::invalid_argument("batched forward requires a dense-only model");
}

Mat run_dense_stages(const Model& m, Mat x, int stage_end, const ForwardOpts& opts,
                     std::vector<Mat>* taps) {
  for (int si = 0; si < stage_end; ++si) {
    const Stage& st = m.stages()[static_cast<size_t>(si)];
    if (st.spec.kind == StageKind::kDense) {
      x = dense_forward_batch(st.dense, x);
      if (taps) taps->push_back(x);
    } else {
      find_activation(st.spec.activation)(x);
      if (opts.train && st.spec.dropout > 0.0) {
        Rng drop_rng(substream_seed(opts.dropout_seed, static_cast<uint64_t>(si)));
        apply_dropout(x, st.spec.dropout, drop_rng);
      }
    }
  }
  return x;
}

}  // namespace

BatchForwardResult forward_with_taps_batch(const Model& m, const Mat& X,
                                           const ForwardOpts& opts) {
  require_dense_path(m);
  BatchForwardResult res;
  res.output = run_dense_stages(m, X, static_cast<int>(m.stages().size()), opts, &res.taps);
  return res;
}

Mat forward_batch(const Model& m, const Mat& X, const ForwardOpts& opts) {
  require_dense_path(m);
  return run_dense_stages(m, X, static_cast<int>(m.stages().size()), opts, nullptr);
}

Mat forward_prefix(const Model& m, const Mat& X, int stage_end, const ForwardOpts& opts) {
  require_dense_path(m);
  return run_dense_stages(m, X, stage_end, opts, nullptr);
}

// ---- Exact dense gradients -------------------------------------------------

namespace {

void require_backprop_compatible(const Model& m) {
  if (!is_dense_only(m.spec()))
    throw std::invalid_argument("dense backprop: model has non-dense stages");
  // The backward walk gates each activation by the preactivation of the
  // dense stage directly before it.
  StageKind prev = StageKind::kActivation;
  for (const Stage& st : m.stages()) {
    if (st.spec.kind == StageKind::kActivation) {
      if (prev != StageKind::kDense)
        throw std::invalid_argument("dense backprop: activation must follow a dense stage");
      if (st.spec.activation != "relu")
        throw std::invalid_argument("dense backprop: only relu is differentiated");
      if (st.spec.dropout > 0.0)
        throw std::invalid_argument("dense backprop: dropout unsupported");
    }
    prev = st.spec.kind;
  }
}

struct DenseTrace {
  std::vector<Mat> inputs;   // per dense stage: the activations feeding it
  std::vector<Mat> preacts;  // per dense stage: z before any activation
  Mat output;
};

DenseTrace dense_trace(const Model& m, const Mat& X) {
  DenseTrace tr;
  Mat cur = X;
  for (const Stage& st : m.stages()) {
    if (st.spec.kind == StageKind::kDense) {
      tr.inputs.push_back(cur);
      cur = dense_forward_batch(st.dense, cur);
      tr.preacts.push_back(cur);
    } else {
      cur = cur.cwiseMax(0.0);
    }
  }
  tr.output = cur;
  return tr;
}

// Shared backward walk from the output delta (already batch-reduced).
std::vector<UnitGrad> backward_from_delta(const Model& m, const DenseTrace& tr, Mat delta) {
  const auto& stages = m.stages();
  std::vector<UnitGrad> grads(m.units().size());
  int du = static_cast<int>(tr.inputs.size());  // dense units walked from the back
  for (int si = static_cast<int>(stages.size()) - 1; si >= 0; --si) {
    const Stage& st = stages[static_cast<size_t>(si)];
    if (st.spec.kind == StageKind::kActivation) {
      // delta currently sits after this activation; gate by relu'(z) of the
      // dense stage feeding it.
      delta = delta.cwiseProduct(
          (tr.preacts[static_cast<size_t>(du - 1)].array() > 0.0).cast<double>().matrix());
    } else {
      --du;
      UnitGrad& g = grads[static_cast<size_t>(du)];
      g.dW.noalias() = delta * tr.inputs[static_cast<size_t>(du)].transpose();
      g.db = delta.rowwise().sum();
      if (du > 0) delta = st.dense.W.transpose() * delta;
    }
  }
  return grads;
}

}  // namespace

std::vector<UnitGrad> backprop_cross_entropy(const Model& m, const Mat& X, const VecI& labels) {
  require_backprop_compatible(m);
  if (labels.size() != X.cols())
    throw std::invalid_argument("backprop_cross_entropy: label count mismatch");
  const DenseTrace tr = dense_trace(m, X);
  const Index b = X.cols();
  Mat delta(tr.output.rows(), b);
  for (Index j = 0; j < b; ++j) {
    const Vec& l = tr.output.col(j);
    const double mx = l.maxCoeff();
    const Vec e = (l.array() - mx).exp();
    delta.col(j) = e / e.sum();
    delta(labels[j], j) -= 1.0;
  }
  delta /= static_cast<double>(b);
  return backward_from_delta(m, tr, std::move(delta));
}

std::vector<UnitGrad> backprop_mse(const Model& m, const Mat& X, const Mat& targets) {
  require_backprop_compatible(m);
  const DenseTrace tr = dense_trace(m, X);
  if (targets.rows() != tr.output.rows() || targets.cols() != tr.output.cols())
    throw std::invalid_argument("backprop_mse: target shape mismatch");
  Mat delta = 2.0 * (tr.output - targets) / static_cast<double>(targets.size());
  return backward_from_delta(m, tr, std::move(delta));
}

namespace {

// dL/dz for one column given per-class coefficients w = dL/dS:
// S_j = p_j . z / r  with r = max(|z|, guard), so for r > guard
// dL/dz = (P w - (S.w) z/r) / r, and for the guarded branch simply P w / r.
Mat goodness_delta(const Mat& prototypes, const Mat& Z, const Mat& scores, const Mat& coef) {
  Mat delta = prototypes * coef;  // d x B
  for (Index j = 0; j < Z.cols(); ++j) {
    const double n = Z.col(j).norm();
    const double r = std::max(n, kNormGuard);
    if (n > kNormGuard) {
      const double sw = scores.col(j).dot(coef.col(j));
      delta.col(j) -= (sw / r) * Z.col(j);
    }
    delta.col(j) /= r;
  }
  return delta;
}

}  // namespace

UnitGrad backprop_layer_goodness_classification(const DenseLayer& layer, const Mat& Xprefix,
                                                const VecI& labels, const Mat& prototypes,
                                                const ClassificationObjectiveConfig& cfg) {
  if (labels.size() != Xprefix.cols())
    throw std::invalid_argument("layer goodness backprop: label count mismatch");
  const Index b = Xprefix.cols();
  const Index n_classes = prototypes.cols();
  const Mat Z = dense_forward_batch(layer, Xprefix);
  const Mat scores = class_goodness_batch(prototypes, Z);
  Mat coef = Mat::Zero(n_classes, b);
  if (cfg.mode == ObjectiveMode::kMargin) {
    for (Index j = 0; j < b; ++j) {
      const Index t = labels[j];
      int active = 0;
      for (Index c = 0; c < n_classes; ++c) {
        if (c == t) continue;
        if (scores(c, j) - scores(t, j) + cfg.margin > 0.0) {
          coef(c, j) = 1.0;
          ++active;
        }
      }
      coef(t, j) = -static_cast<double>(active);
    }
  } else {
    // Loss form of the alignment objective: -(alpha*S_t - sum_others).
    const double alpha = cfg.resolved_alpha(static_cast<int>(n_classes));
    coef.setOnes();
    for (Index j = 0; j < b; ++j) coef(labels[j], j) = -alpha;
  }
  const Mat delta = goodness_delta(prototypes, Z, scores, coef) / static_cast<double>(b);
  UnitGrad g;
  g.dW.noalias() = delta * Xprefix.transpose();
  g.db = delta.rowwise().sum();
  return g;
}

UnitGrad backprop_layer_goodness_regression(const DenseLayer& layer, const Mat& Xprefix,
                                            const Vec& targets, const Vec& upper_prototype) {
  if (targets.size() != Xprefix.cols())
    throw std::invalid_argument("layer goodness backprop: target count mismatch");
  const Index b = Xprefix.cols();
  const Mat Z = dense_forward_batch(layer, Xprefix);
  const Mat P = upper_prototype;
  const Mat scores = class_goodness_batch(P, Z);  // 1 x B
  Mat coef(1, b);
  for (Index j = 0; j < b; ++j) coef(0, j) = 2.0 * (scores(0, j) - targets[j]);
  const Mat delta = goodness_delta(P, Z, scores, coef) / static_cast<double>(b);
  UnitGrad g;
  g.dW.noalias() = delta * Xprefix.transpose();
  g.db = delta.rowwise().sum();
  return g;
}

double cross_entropy_loss(const Mat& logits, const VecI& labels) {
  if (labels.size() != logits.cols())
    throw std::invalid_argument("cross_entropy_loss: label count mismatch");
  double total = 0.0;
  for (Index j = 0; j < logits.cols(); ++j) {
    const Vec& l = logits.col(j);
    const double mx = l.maxCoeff();
    const double lse = std::log((l.array() - mx).exp().sum()) + mx;
    total += lse - l[labels[j]];
  }
  return total / static_cast<double>(logits.cols());
}

double mse_loss(const Mat& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  return (pred - target).squaredNorm() / static_cast<double>(target.size());
}

// ---- Architecture builders -------------------------------------------------

ModelSpec mlp_classification_spec(int input_dim, int width, int depth, int num_classes) {
  if (depth < 1 || width < 1 || num_classes < 2 || input_dim < 1)
    throw std::invalid_argument("mlp_classification_spec: bad architecture");
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.task = TaskKind::kClassification;
  spec.num_classes = num_classes;
  for (int i = 0; i < depth; ++i) {
    spec.stages.push_back({.kind = StageKind::kDense, .out_dim = width});
    spec.stages.push_back({.kind = StageKind::kActivation});
  }
  spec.stages.push_back({.kind = StageKind::kDense, .out_dim = num_classes});
  return spec;
}

ModelSpec mlp_regression_ff_spec(int input_dim, int width, int depth) {
  if (depth < 1 || width < 2 || input_dim < 1)
    throw std::invalid_argument("mlp_regression_ff_spec: bad architecture");
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.task = TaskKind::kRegression;
  for (int i = 0; i < depth; ++i) {
    spec.stages.push_back({.kind = StageKind::kDense, .out_dim = width});
    spec.stages.push_back({.kind = StageKind::kActivation});
  }
  return spec;
}

ModelSpec mlp_regression_bp_spec(int input_dim, int width, int depth) {
  ModelSpec spec = mlp_regression_ff_spec(input_dim, width, depth);
  spec.stages.push_back({.kind = StageKind::kDense, .out_dim = 1});
  return spec;
}

}  // namespace ffzo::nn
