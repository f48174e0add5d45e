#include "ffzo/io.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ffzo::io {
namespace {

using nlohmann::json;

constexpr const char* kCheckpointVersion = "ffzo-checkpoint-1";

std::string kind_name(nn::StageKind k) {
  switch (k) {
    case nn::StageKind::kDense: return "dense";
    case nn::StageKind::kConv: return "conv";
    case nn::StageKind::kActivation: return "activation";
    case nn::StageKind::kMaxPool: return "max_pool";
    case nn::StageKind::kFlatten: return "flatten";
  }
  throw std::logic_error("kind_name: unreachable");
}

nn::StageKind parse_kind(const std::string& name) {
  if (name == "dense") return nn::StageKind::kDense;
  if (name == "conv") return nn::StageKind::kConv;
  if (name == "activation") return nn::StageKind::kActivation;
  if (name == "max_pool") return nn::StageKind::kMaxPool;
  if (name == "flatten") return nn::StageKind::kFlatten;
  throw std::runtime_error("checkpoint: unknown stage kind " + name);
}

json stage_to_json(const nn::StageSpec& s) {
  json j;
  j["kind"] = kind_name(s.kind);
  switch (s.kind) {
    case nn::StageKind::kDense:
      j["out_dim"] = s.out_dim;
      break;
    case nn::StageKind::kConv:
      j["out_channels"] = s.out_channels;
      j["kernel_h"] = s.kernel_h;
      j["kernel_w"] = s.kernel_w;
      j["stride_h"] = s.stride_h;
      j["stride_w"] = s.stride_w;
      j["pad_h"] = s.pad_h;
      j["pad_w"] = s.pad_w;
      j["dilation_h"] = s.dilation_h;
      j["dilation_w"] = s.dilation_w;
      j["proj_dim"] = s.proj_dim;
      break;
    case nn::StageKind::kActivation:
      j["activation"] = s.activation;
      j["dropout"] = s.dropout;
      break;
    case nn::StageKind::kMaxPool:
      j["pool_size"] = s.pool_size;
      j["pool_stride"] = s.pool_stride;
      break;
    case nn::StageKind::kFlatten:
      break;
  }
  return j;
}

nn::StageSpec stage_from_json(const json& j) {
  nn::StageSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  switch (s.kind) {
    case nn::StageKind::kDense:
      s.out_dim = j.at("out_dim").get<int>();
      break;
    case nn::StageKind::kConv:
      s.out_channels = j.at("out_channels").get<int>();
      s.kernel_h = j.at("kernel_h").get<int>();
      s.kernel_w = j.at("kernel_w").get<int>();
      s.stride_h = j.at("stride_h").get<int>();
      s.stride_w = j.at("stride_w").get<int>();
      s.pad_h = j.at("pad_h").get<int>();
      s.pad_w = j.at("pad_w").get<int>();
      s.dilation_h = j.at("dilation_h").get<int>();
      s.dilation_w = j.at("dilation_w").get<int>();
      s.proj_dim = j.at("proj_dim").get<int>();
      break;
    case nn::StageKind::kActivation:
      s.activation = j.at("activation").get<std::string>();
      s.dropout = j.at("dropout").get<double>();
      break;
    case nn::StageKind::kMaxPool:
      s.pool_size = j.at("pool_size").get<int>();
      s.pool_stride = j.at("pool_stride").get<int>();
      break;
    case nn::StageKind::kFlatten:
      break;
  }
  return s;
}

json mat_to_json(const Mat& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Mat>(data.data(), m.rows(), m.cols()) = m;
  j["data"] = data;
  return j;
}

Mat mat_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) {
    throw std::runtime_error("checkpoint: matrix payload size mismatch");
  }
  return Eigen::Map<const Mat>(data.data(), rows, cols);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.class_bank.has_value() == ckpt.regression_bank.has_value()) {
    throw std::invalid_argument("save_checkpoint: exactly one bank must be present");
  }
  const nn::Model& m = ckpt.model;
  json j;
  j["version"] = kCheckpointVersion;

  json spec;
  spec["task"] =
      m.spec().task == nn::TaskKind::kClassification ? "classification" : "regression";
  spec["num_classes"] = m.spec().num_classes;
  spec["input_dim"] = m.spec().input_dim;
  spec["input_channels"] = m.spec().input_channels;
  spec["input_h"] = m.spec().input_h;
  spec["input_w"] = m.spec().input_w;
  spec["stages"] = json::array();
  for (const auto& st : m.spec().stages) spec["stages"].push_back(stage_to_json(st));
  j["spec"] = spec;

  const Vec params = m.global_flat();
  j["params"] = std::vector<double>(params.data(), params.data() + params.size());

  j["projections"] = json::array();
  for (const auto& st : m.stages()) {
    if (st.spec.kind != nn::StageKind::kConv) continue;
    json per_stage = json::array();
    for (const auto& p : st.projections) per_stage.push_back(mat_to_json(p));
    j["projections"].push_back(per_stage);
  }

  json bank;
  if (ckpt.class_bank) {
    bank["type"] = "class";
    bank["per_unit"] = json::array();
    for (const auto& p : ckpt.class_bank->per_unit) bank["per_unit"].push_back(mat_to_json(p));
  } else {
    bank["type"] = "regression";
    bank["per_unit"] = json::array();
    for (const auto& v : ckpt.regression_bank->per_unit) {
      bank["per_unit"].push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
  }
  j["bank"] = bank;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  if (j.at("version").get<std::string>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }

  nn::ModelSpec spec;
  const json& js = j.at("spec");
  spec.task = js.at("task").get<std::string>() == "classification"
                  ? nn::TaskKind::kClassification
                  : nn::TaskKind::kRegression;
  spec.num_classes = js.at("num_classes").get<int>();
  spec.input_dim = js.at("input_dim").get<int>();
  spec.input_channels = js.at("input_channels").get<int>();
  spec.input_h = js.at("input_h").get<int>();
  spec.input_w = js.at("input_w").get<int>();
  for (const auto& st : js.at("stages")) spec.stages.push_back(stage_from_json(st));

  Checkpoint ckpt;
  ckpt.model = nn::build_model(spec);

  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<Index>(params.size()) != ckpt.model.global_param_count()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  ckpt.model.set_global_flat(Eigen::Map<const Vec>(params.data(),
                                                   static_cast<Index>(params.size())));

  const json& projections = j.at("projections");
  std::size_t pi = 0;
  for (auto& st : ckpt.model.stages()) {
    if (st.spec.kind != nn::StageKind::kConv) continue;
    if (pi >= projections.size()) throw std::runtime_error("checkpoint: missing projections");
    const json& per_stage = projections[pi++];
    if (per_stage.size() != st.projections.size()) {
      throw std::runtime_error("checkpoint: projection count mismatch");
    }
    for (std::size_t c = 0; c < st.projections.size(); ++c) {
      Mat p = mat_from_json(per_stage[c]);
      if (p.rows() != st.projections[c].rows() || p.cols() != st.projections[c].cols()) {
        throw std::runtime_error("checkpoint: projection shape mismatch");
      }
      st.projections[c] = std::move(p);
    }
  }

  const json& bank = j.at("bank");
  if (bank.at("type").get<std::string>() == "class") {
    infer::PrototypeBank b;
    for (const auto& p : bank.at("per_unit")) b.per_unit.push_back(mat_from_json(p));
    ckpt.class_bank = std::move(b);
  } else {
    infer::RegressionBank b;
    for (const auto& v : bank.at("per_unit")) {
      const auto data = v.get<std::vector<double>>();
      b.per_unit.push_back(
          Eigen::Map<const Vec>(data.data(), static_cast<Index>(data.size())));
    }
    ckpt.regression_bank = std::move(b);
  }
  return ckpt;
}

}  // namespace ffzo::io
