#include "ffzo/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ffzo::bench {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << content;
  }
  fs::rename(tmp, path);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Renders (or reuses) a procedural digit corpus of exactly the given sizes.
std::string ensure_digit_corpus(const std::string& root, Index n_train, Index n_test,
                                unsigned long long seed) {
  std::ostringstream name;
  name << "digits-" << n_train << "-" << n_test << "-" << seed;
  const fs::path dir = fs::path(root) / name.str();
  const bool present = fs::exists(dir / "train-images-idx3-ubyte") &&
                       fs::exists(dir / "train-labels-idx1-ubyte") &&
                       fs::exists(dir / "t10k-images-idx3-ubyte") &&
                       fs::exists(dir / "t10k-labels-idx1-ubyte");
  if (!present) {
    fs::create_directories(dir);
    data::generate_digit_idx(dir.string(), n_train, n_test, seed);
  }
  return dir.string();
}

}  // namespace

// ---- Cell identity ---------------------------------------------------------

std::string CellConfig::key() const {
  std::ostringstream out;
  out << "dataset=" << dataset << ";arch=" << arch << ";scale=" << scale
      << ";depth=" << depth << ";width=" << width << ";regime=" << train::regime_name(regime)
      << ";P=" << directions << ";seed=" << seed << ";data_seed=" << data_seed
      << ";classes=" << classes << ";epochs=" << epochs << ";batch=" << batch_size
      << ";lr=" << fmt_double(learning_rate) << ";eps=" << fmt_double(epsilon)
      << ";margin=" << fmt_double(margin) << ";alpha=" << fmt_double(alpha)
      << ";objective=" << objective;
  return out.str();
}

std::string CellConfig::hash_hex() const {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(key());
  return out.str();
}

// ---- Plans -----------------------------------------------------------------

void ExperimentPlan::validate() const {
  const bool known_dataset = dataset == "mnist" || dataset == "digits" || dataset == "synth1" ||
                             dataset == "synth2" || dataset == "mnist_reg";
  if (!known_dataset) throw std::invalid_argument("plan: unknown dataset " + dataset);
  if (arch != "mlp" && arch != "cnn" && arch != "photonic") {
    throw std::invalid_argument("plan: unknown arch " + arch);
  }
  if (scale != "desk" && scale != "paper") {
    throw std::invalid_argument("plan: scale must be desk or paper");
  }
  if (depths.empty() || widths.empty() || directions.empty() || regimes.empty() ||
      seeds.empty()) {
    throw std::invalid_argument("plan: every sweep axis needs at least one point");
  }
  for (const int d : depths)
    if (d < 1) throw std::invalid_argument("plan: depths must be >= 1");
  for (const int w : widths)
    if (w < 1) throw std::invalid_argument("plan: widths must be >= 1");
  for (const int p : directions)
    if (p < 1) throw std::invalid_argument("plan: directions must be >= 1");
  if (classes < 2) throw std::invalid_argument("plan: classes must be >= 2");
  if (objective != "margin" && objective != "alpha") {
    throw std::invalid_argument("plan: objective must be margin or alpha");
  }
  if (out_dir.empty()) throw std::invalid_argument("plan: out directory must be set");
}

std::vector<CellConfig> ExperimentPlan::cells() const {
  validate();
  std::vector<CellConfig> out;
  for (const int depth : depths) {
    for (const int width : widths) {
      for (const int P : directions) {
        for (const auto regime : regimes) {
          for (const auto seed : seeds) {
            CellConfig c;
            c.dataset = dataset;
            c.arch = arch;
            c.scale = scale;
            c.depth = depth;
            c.width = width;
            c.regime = regime;
            c.directions = P;
            c.seed = seed;
            c.data_seed = data_seed;
            c.classes = classes;
            c.epochs = resolved_epochs(*this);
            c.batch_size = resolved_batch_size(*this);
            c.learning_rate = learning_rate;
            c.epsilon = epsilon;
            c.margin = margin;
            c.alpha = alpha;
            c.objective = objective;
            out.push_back(std::move(c));
          }
        }
      }
    }
  }
  return out;
}

int resolved_epochs(const ExperimentPlan& plan) {
  if (plan.epochs >= 0) return plan.epochs;
  return plan.scale == "paper" ? 100 : 20;
}

int resolved_batch_size(const ExperimentPlan& plan) {
  if (plan.batch_size >= 1) return plan.batch_size;
  return plan.arch == "photonic" ? 128 : 256;
}

ExperimentPlan plan_from_config(const cfg::Config& config) {
  ExperimentPlan plan;
  plan.dataset = config.get("plan", "dataset", plan.dataset);
  plan.arch = config.get("plan", "arch", plan.arch);
  plan.scale = config.get("plan", "scale", plan.scale);
  plan.out_dir = config.get("plan", "out", plan.out_dir);
  if (config.has("plan", "depths")) plan.depths = config.get_int_list("plan", "depths");
  if (config.has("plan", "widths")) plan.widths = config.get_int_list("plan", "widths");
  if (config.has("plan", "directions"))
    plan.directions = config.get_int_list("plan", "directions");
  if (config.has("plan", "regimes")) {
    plan.regimes.clear();
    for (const auto& name : config.get_list("plan", "regimes")) {
      plan.regimes.push_back(train::parse_regime(name));
    }
  }
  if (config.has("plan", "seeds")) plan.seeds = config.get_u64_list("plan", "seeds");
  plan.classes = config.get_int("plan", "classes", plan.classes);
  plan.data_seed = config.get_u64("plan", "data_seed", plan.data_seed);
  plan.save_models = config.get_bool("plan", "save_models", plan.save_models);

  plan.epochs = config.get_int("train", "epochs", plan.epochs);
  plan.batch_size = config.get_int("train", "batch_size", plan.batch_size);
  plan.learning_rate = config.get_double("train", "learning_rate", plan.learning_rate);
  plan.epsilon = config.get_double("train", "epsilon", plan.epsilon);
  plan.margin = config.get_double("train", "margin", plan.margin);
  plan.alpha = config.get_double("train", "alpha", plan.alpha);
  plan.objective = config.get("train", "objective", plan.objective);
  plan.validate();
  return plan;
}

// ---- Architecture plumbing -------------------------------------------------

nn::ModelSpec cnn_classification_spec(int in_h, int in_w, int channels, int num_classes,
                                      int proj_dim) {
  if (in_h < 1 || in_w < 1 || channels < 1 || num_classes < 2 || proj_dim < 1) {
    throw std::invalid_argument("cnn_classification_spec: bad architecture");
  }
  nn::ModelSpec spec;
  spec.input_channels = 1;
  spec.input_h = in_h;
  spec.input_w = in_w;
  spec.task = nn::TaskKind::kClassification;
  spec.num_classes = num_classes;
  for (int block = 0; block < 2; ++block) {
    spec.stages.push_back({.kind = nn::StageKind::kConv, .out_channels = channels,
                           .kernel_h = 6, .kernel_w = 6, .pad_h = 2, .pad_w = 2,
                           .proj_dim = proj_dim});
    spec.stages.push_back({.kind = nn::StageKind::kActivation});
    spec.stages.push_back({.kind = nn::StageKind::kMaxPool});
  }
  spec.stages.push_back({.kind = nn::StageKind::kFlatten});
  spec.stages.push_back({.kind = nn::StageKind::kDense, .out_dim = num_classes});
  return spec;
}

nn::ModelSpec cell_model_spec(const CellConfig& cell, int input_dim, int num_classes) {
  if (cell.arch == "cnn") {
    if (cell.regression()) {
      throw std::invalid_argument("cnn cells support classification only");
    }
    if (cell.depth != 2) {
      throw std::invalid_argument("cnn cells are fixed at two conv stages (depth = 2)");
    }
    return cnn_classification_spec(28, 28, cell.width, num_classes);
  }
  if (cell.arch != "mlp") throw std::invalid_argument("cell_model_spec: not a model arch");
  if (cell.regression()) {
    const bool bp =
        cell.regime == train::Regime::kBpDd || cell.regime == train::Regime::kBpAd;
    return bp ? nn::mlp_regression_bp_spec(input_dim, cell.width, cell.depth)
              : nn::mlp_regression_ff_spec(input_dim, cell.width, cell.depth);
  }
  return nn::mlp_classification_spec(input_dim, cell.width, cell.depth, num_classes);
}

long long param_count(const nn::ModelSpec& spec) {
  return static_cast<long long>(nn::build_model(spec).global_param_count());
}

long long photonic_param_count(int ports, int meshes) {
  return 3LL * (static_cast<long long>(ports) * (ports - 1) / 2) * meshes;
}

// ---- Data resolution -------------------------------------------------------

std::string resolve_image_dir(const std::string& root, Index n_train, Index n_test,
                              unsigned long long seed) {
  if (const char* env = std::getenv("FFZO_MNIST_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return ensure_digit_corpus(root, n_train, n_test, seed);
}

namespace {

data::DatasetSplit filter_classes(const data::DatasetSplit& s, int classes) {
  std::vector<Index> keep;
  for (Index i = 0; i < s.size(); ++i) {
    if (s.labels(i) < classes) keep.push_back(i);
  }
  data::DatasetSplit out;
  out.tag = s.tag;
  out.inputs.resize(s.inputs.rows(), static_cast<Index>(keep.size()));
  out.labels.resize(static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.inputs.col(static_cast<Index>(i)) = s.inputs.col(keep[i]);
    out.labels(static_cast<Index>(i)) = s.labels(keep[i]);
  }
  return out;
}

// Wanted split sizes; at paper scale the wider models keep the full corpus.
void image_sizes(const CellConfig& cell, Index& n_train, Index& n_test) {
  if (cell.scale == "desk") {
    n_train = 10000;
    n_test = 2000;
  } else if (cell.arch == "mlp") {
    n_train = 50000;
    n_test = 10000;
  } else {
    n_train = 60000;
    n_test = 10000;
  }
}

data::MnistPair image_pair(const CellConfig& cell, const std::string& root) {
  Index n_train = 0, n_test = 0;
  image_sizes(cell, n_train, n_test);
  // "digits" pins the procedural corpus even when a real one is available.
  const std::string dir = cell.dataset == "digits"
                              ? ensure_digit_corpus(root, n_train, n_test, cell.data_seed)
                              : resolve_image_dir(root, n_train, n_test, cell.data_seed);
  auto pair = data::load_mnist_dir(dir);
  Rng rng(cell.data_seed);
  if (pair.train.size() > n_train) {
    Rng sub = rng.fork(1);
    pair.train = data::subsample(pair.train, n_train, sub);
  }
  if (pair.test.size() > n_test) {
    Rng sub = rng.fork(2);
    pair.test = data::subsample(pair.test, n_test, sub);
  }
  return pair;
}

void encode_fields(const CellConfig& cell, const data::DatasetSplit& split, CMat& fields,
                   VecI& labels) {
  const int side = static_cast<int>(std::lround(std::sqrt(double(cell.width))));
  if (side * side != cell.width || 28 % side != 0) {
    throw std::invalid_argument("photonic cells need a square port count dividing 28x28");
  }
  const int factor = 28 / side;
  fields.resize(cell.width, split.size());
  for (Index i = 0; i < split.size(); ++i) {
    const Vec small = factor == 1 ? Vec(split.inputs.col(i))
                                  : photonic::downsample_image(split.inputs.col(i), 28, factor);
    fields.col(i) = photonic::encode_image(small);
  }
  labels = split.labels;
}

}  // namespace

CellData resolve_cell_data(const CellConfig& cell, const std::string& root) {
  CellData out;
  if (cell.dataset == "synth1" || cell.dataset == "synth2") {
    data::SyntheticSpec spec;
    spec.function_id = cell.dataset == "synth1" ? 1 : 2;
    spec.input_dim = spec.function_id == 1 ? 2 : 5;
    spec.seed = cell.data_seed;
    Rng rng(cell.data_seed);
    auto pair = data::generate_synthetic(spec, rng);
    out.train = std::move(pair.train);
    out.test = std::move(pair.test);
    return out;
  }

  auto pair = image_pair(cell, root);
  if (cell.dataset == "mnist_reg") {
    out.train = data::mnist_as_regression(pair.train);
    out.test = data::mnist_as_regression(pair.test);
    return out;
  }

  if (cell.classes < 10) {
    pair.train = filter_classes(pair.train, cell.classes);
    pair.test = filter_classes(pair.test, cell.classes);
  }
  if (cell.arch == "photonic") {
    encode_fields(cell, pair.train, out.train_fields, out.train_labels);
    encode_fields(cell, pair.test, out.test_fields, out.test_labels);
  }
  out.train = std::move(pair.train);
  out.test = std::move(pair.test);
  return out;
}

// ---- Running ---------------------------------------------------------------

namespace {

train::RunConfig cell_run_config(const CellConfig& cell) {
  train::RunConfig cfg;
  cfg.regime = cell.regime;
  cfg.task = cell.regression() ? nn::TaskKind::kRegression : nn::TaskKind::kClassification;
  cfg.learning_rate = cell.learning_rate;
  cfg.epsilon = cell.epsilon;
  cfg.directions = cell.directions;
  cfg.batch_size = cell.batch_size;
  cfg.epochs = cell.epochs;
  cfg.seed = cell.seed;
  cfg.eval_stride = 0;
  cfg.objective.margin = cell.margin;
  cfg.objective.alpha = cell.alpha;
  cfg.objective.mode =
      cell.objective == "alpha" ? ObjectiveMode::kAlphaWeighted : ObjectiveMode::kMargin;
  return cfg;
}

CellResult run_photonic_cell(const CellConfig& cell, const CellData& data,
                             CellResult result) {
  if (cell.regression()) throw std::invalid_argument("photonic cells are classification only");
  Rng master(cell.seed);
  Rng init_rng = master.fork(1);
  Rng bank_rng = master.fork(2);
  Rng train_rng = master.fork(3);

  photonic::MeshNetwork net(cell.width, cell.depth);
  net.init_phases(init_rng);
  result.param_count = photonic_param_count(cell.width, cell.depth);
  const auto cfg = cell_run_config(cell);

  if (cell.regime == train::Regime::kFfDd) {
    const auto bank = train::make_photonic_bank(net, cell.classes, bank_rng);
    const auto r = train::train_ff_photonic(net, bank, data.train_fields, data.train_labels,
                                            data.test_fields, data.test_labels, cfg, train_rng);
    result.metric =
        train::photonic_accuracy(r.net, bank, data.test_fields, data.test_labels);
    result.eval_count = r.log.total_evals;
    result.seconds = r.log.total_seconds;
  } else if (cell.regime == train::Regime::kBpDd) {
    const auto r =
        train::train_bp_dd_photonic(net, cell.classes, data.train_fields, data.train_labels,
                                    data.test_fields, data.test_labels, cfg, train_rng);
    result.metric =
        train::photonic_bp_accuracy(r.net, cell.classes, data.test_fields, data.test_labels);
    result.eval_count = r.log.total_evals;
    result.seconds = r.log.total_seconds;
  } else {
    throw std::invalid_argument("photonic cells support ff_dd and bp_dd only");
  }
  result.ok = true;
  return result;
}

}  // namespace

CellResult run_cell(const CellConfig& cell, const CellData& data) {
  return run_cell(cell, data, nullptr);
}

CellResult run_cell(const CellConfig& cell, const CellData& data, io::Checkpoint* saved) {
  CellResult result;
  result.config = cell;
  try {
    if (cell.arch == "photonic") return run_photonic_cell(cell, data, std::move(result));

    const int input_dim = static_cast<int>(data.train.dim());
    const auto spec = cell_model_spec(cell, input_dim, cell.classes);
    Rng master(cell.seed);
    Rng init_rng = master.fork(1);
    Rng bank_rng = master.fork(2);
    Rng train_rng = master.fork(3);
    auto m0 = nn::init_parameters(spec, init_rng);
    result.param_count = static_cast<long long>(m0.global_param_count());
    const auto cfg = cell_run_config(cell);

    const bool ff =
        cell.regime == train::Regime::kFfDd || cell.regime == train::Regime::kFfAd;
    if (cell.regression()) {
      if (ff) {
        const auto bank = infer::make_regression_bank(m0, bank_rng);
        const auto r =
            train::train_ff_regression(m0, bank, data.train, data.test, cfg, train_rng);
        result.metric = infer::evaluate_regression(r.model, bank, data.test).r2;
        result.eval_count = r.log.total_evals;
        result.seconds = r.log.total_seconds;
        if (saved) *saved = io::Checkpoint{r.model, std::nullopt, bank};
      } else {
        const auto r = cell.regime == train::Regime::kBpDd
                           ? train::train_bp_dd(m0, data.train, data.test, cfg, train_rng)
                           : train::train_bp_ad(m0, data.train, data.test, cfg, train_rng);
        result.metric = infer::evaluate_bp_regression(r.model, data.test).r2;
        result.eval_count = r.log.total_evals;
        result.seconds = r.log.total_seconds;
      }
    } else {
      if (ff) {
        const auto bank = infer::make_class_bank(m0, cell.classes, bank_rng);
        const auto r =
            train::train_ff_classification(m0, bank, data.train, data.test, cfg, train_rng);
        result.metric = infer::evaluate_classification(r.model, bank, data.test).accuracy;
        result.eval_count = r.log.total_evals;
        result.seconds = r.log.total_seconds;
        if (saved) *saved = io::Checkpoint{r.model, bank, std::nullopt};
      } else {
        const auto r = cell.regime == train::Regime::kBpDd
                           ? train::train_bp_dd(m0, data.train, data.test, cfg, train_rng)
                           : train::train_bp_ad(m0, data.train, data.test, cfg, train_rng);
        result.metric = infer::evaluate_bp_classification(r.model, data.test).accuracy;
        result.eval_count = r.log.total_evals;
        result.seconds = r.log.total_seconds;
      }
    }
    result.ok = true;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  return result;
}

// ---- Manifests -------------------------------------------------------------

namespace {

json cell_to_json(const CellConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["arch"] = c.arch;
  j["scale"] = c.scale;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["regime"] = train::regime_name(c.regime);
  j["directions"] = c.directions;
  j["seed"] = c.seed;
  j["data_seed"] = c.data_seed;
  j["classes"] = c.classes;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["epsilon"] = c.epsilon;
  j["margin"] = c.margin;
  j["alpha"] = c.alpha;
  j["objective"] = c.objective;
  return j;
}

CellConfig cell_from_json(const json& j) {
  CellConfig c;
  c.dataset = j.at("dataset").get<std::string>();
  c.arch = j.at("arch").get<std::string>();
  c.scale = j.at("scale").get<std::string>();
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.regime = train::parse_regime(j.at("regime").get<std::string>());
  c.directions = j.at("directions").get<int>();
  c.seed = j.at("seed").get<unsigned long long>();
  c.data_seed = j.at("data_seed").get<unsigned long long>();
  c.classes = j.at("classes").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.margin = j.at("margin").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.objective = j.at("objective").get<std::string>();
  return c;
}

}  // namespace

void write_cell_manifest(const CellResult& result, const std::string& path) {
  json j;
  j["key"] = result.config.key();
  j["config"] = cell_to_json(result.config);
  j["ok"] = result.ok;
  j["error"] = result.error;
  j["param_count"] = result.param_count;
  if (std::isnan(result.metric)) {
    j["metric"] = nullptr;
  } else {
    j["metric"] = result.metric;
  }
  j["eval_count"] = result.eval_count;
  j["seconds"] = result.seconds;
  atomic_write(path, j.dump(2) + "\n");
}

CellResult read_cell_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  CellResult result;
  result.config = cell_from_json(j.at("config"));
  if (j.at("key").get<std::string>() != result.config.key()) {
    throw std::runtime_error("cell manifest key does not match its config: " + path);
  }
  result.ok = j.at("ok").get<bool>();
  result.error = j.at("error").get<std::string>();
  result.param_count = j.at("param_count").get<long long>();
  result.metric = j.at("metric").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                           : j.at("metric").get<double>();
  result.eval_count = j.at("eval_count").get<std::uint64_t>();
  result.seconds = j.at("seconds").get<double>();
  return result;
}

CellResult regenerate_cell(const std::string& manifest_path, const std::string& root) {
  const CellResult recorded = read_cell_manifest(manifest_path);
  const CellData data = resolve_cell_data(recorded.config, root);
  return run_cell(recorded.config, data);
}

void write_results_csv(const std::vector<CellResult>& results, const std::string& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "dataset,arch,depth,width,regime,P,seed,param_count,metric,eval_count,seconds\n";
  for (const auto& r : results) {
    const auto& c = r.config;
    out << c.dataset << "," << c.arch << "," << c.depth << "," << c.width << ","
        << train::regime_name(c.regime) << "," << c.directions << "," << c.seed << ","
        << r.param_count << "," << r.metric << "," << r.eval_count << "," << r.seconds << "\n";
  }
  atomic_write(path, out.str());
}

std::vector<CellResult> run_plan(const ExperimentPlan& plan) {
  plan.validate();
  const fs::path out_dir(plan.out_dir);
  const fs::path cell_dir = out_dir / "cells";
  const fs::path data_root = out_dir / "data";
  fs::create_directories(cell_dir);
  fs::create_directories(data_root);

  // Cells of a plan share splits; key on what actually changes the data.
  std::map<std::string, CellData> data_cache;
  const auto data_key = [](const CellConfig& c) {
    std::ostringstream k;
    k << c.dataset << "|" << c.scale << "|" << (c.arch == "mlp" ? "mlp" : "wide") << "|"
      << c.classes << "|" << (c.arch == "photonic" ? c.width : 0) << "|" << c.data_seed;
    return k.str();
  };

  std::vector<CellResult> results;
  for (const auto& cell : plan.cells()) {
    const fs::path manifest = cell_dir / (cell.hash_hex() + ".json");
    if (fs::exists(manifest)) {
      try {
        CellResult prior = read_cell_manifest(manifest.string());
        if (prior.config.key() == cell.key()) {
          prior.skipped = true;
          results.push_back(std::move(prior));
          continue;
        }
      } catch (const std::exception&) {
        // Unreadable manifest: fall through and rerun the cell.
      }
    }

    CellResult result;
    const auto key = data_key(cell);
    auto it = data_cache.find(key);
    try {
      if (it == data_cache.end()) {
        it = data_cache.emplace(key, resolve_cell_data(cell, data_root.string())).first;
      }
    } catch (const std::exception& e) {
      result.config = cell;
      result.error = e.what();
      write_cell_manifest(result, manifest.string());
      results.push_back(std::move(result));
      continue;
    }

    io::Checkpoint ckpt;
    result = run_cell(cell, it->second, plan.save_models ? &ckpt : nullptr);
    if (plan.save_models && result.ok &&
        (cell.regime == train::Regime::kFfDd || cell.regime == train::Regime::kFfAd) &&
        cell.arch != "photonic") {
      const fs::path model_path = cell_dir / (cell.hash_hex() + ".model.json");
      io::save_checkpoint(ckpt, model_path.string());
    }
    write_cell_manifest(result, manifest.string());
    results.push_back(std::move(result));
  }

  write_results_csv(results, (out_dir / "results.csv").string());

  json manifest;
  manifest["version"] = train::kVersionString;
  manifest["dataset"] = plan.dataset;
  manifest["arch"] = plan.arch;
  manifest["scale"] = plan.scale;
  manifest["cells"] = json::array();
  for (const auto& r : results) {
    json row;
    row["hash"] = r.config.hash_hex();
    row["key"] = r.config.key();
    row["ok"] = r.ok;
    row["skipped"] = r.skipped;
    manifest["cells"].push_back(row);
  }
  atomic_write((out_dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return results;
}

std::vector<CellResult> direction_sweep(ExperimentPlan base, const std::vector<int>& p_values) {
  if (p_values.empty()) throw std::invalid_argument("direction_sweep: no direction counts");
  base.directions = p_values;
  return run_plan(base);
}

// ---- Embedding export ------------------------------------------------------

void export_embeddings(const nn::Model& m, const infer::PrototypeBank* class_bank,
                       const infer::RegressionBank* regression_bank,
                       const data::DatasetSplit& split, Index max_samples,
                       const std::string& path) {
  if ((class_bank == nullptr) == (regression_bank == nullptr)) {
    throw std::invalid_argument("export_embeddings: exactly one bank must be given");
  }
  const Index n = max_samples > 0 ? std::min(max_samples, split.size()) : split.size();
  std::ostringstream out;
  out << std::setprecision(17);
  out << "kind,sample,unit,label,values\n";
  for (Index i = 0; i < n; ++i) {
    const auto fwd = nn::forward_with_taps(m, split.inputs.col(i));
    const double label =
        split.classification() ? double(split.labels(i)) : split.targets(i);
    for (std::size_t u = 0; u < fwd.taps.size(); ++u) {
      out << "tap," << i << "," << u << "," << label;
      for (Index k = 0; k < fwd.taps[u].size(); ++k) out << "," << fwd.taps[u](k);
      out << "\n";
    }
  }
  for (std::size_t u = 0; u < m.units().size(); ++u) {
    if (class_bank != nullptr) {
      const Mat& protos = class_bank->per_unit.at(u);
      for (Index c = 0; c < protos.cols(); ++c) {
        out << "prototype,-1," << u << "," << c;
        for (Index k = 0; k < protos.rows(); ++k) out << "," << protos(k, c);
        out << "\n";
      }
    } else {
      const Vec& upper = regression_bank->per_unit.at(u);
      out << "prototype,-1," << u << ",1";
      for (Index k = 0; k < upper.size(); ++k) out << "," << upper(k);
      out << "\n";
      out << "prototype,-1," << u << ",-1";
      for (Index k = 0; k < upper.size(); ++k) out << "," << -upper(k);
      out << "\n";
    }
  }
  atomic_write(path, out.str());
}

std::vector<EmbeddingRow> parse_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "kind,sample,unit,label,values") {
    throw std::runtime_error("embedding file: bad header");
  }
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string tok;
    EmbeddingRow row;
    std::getline(fields, row.kind, ',');
    std::getline(fields, tok, ',');
    row.sample = std::stoll(tok);
    std::getline(fields, tok, ',');
    row.unit = std::stoi(tok);
    std::getline(fields, tok, ',');
    row.label = std::stod(tok);
    std::vector<double> values;
    while (std::getline(fields, tok, ',')) values.push_back(std::stod(tok));
    if (!values.empty()) {
      row.values = Eigen::Map<const Vec>(values.data(), static_cast<Index>(values.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ffzo::bench
