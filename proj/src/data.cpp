#include "ffzo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace ffzo::data {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) {
    throw IdxError(IdxError::Kind::kTruncated, path + ": header ends early");
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t want,
                                        const std::string& path) {
  std::vector<unsigned char> buf(want);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want));
  if (static_cast<std::size_t>(in.gcount()) != want) {
    throw IdxError(IdxError::Kind::kTruncated,
                   path + ": payload shorter than the header promises");
  }
  return buf;
}

}  // namespace

DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError(IdxError::Kind::kIo, "cannot open " + images_path);
  if (read_u32_be(img, images_path) != kImagesMagic) {
    throw IdxError(IdxError::Kind::kBadMagic, images_path + ": not an IDX image file");
  }
  const std::uint32_t n = read_u32_be(img, images_path);
  const std::uint32_t rows = read_u32_be(img, images_path);
  const std::uint32_t cols = read_u32_be(img, images_path);
  const std::size_t dim = std::size_t(rows) * cols;
  const auto pixels = read_payload(img, std::size_t(n) * dim, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError(IdxError::Kind::kIo, "cannot open " + labels_path);
  if (read_u32_be(lab, labels_path) != kLabelsMagic) {
    throw IdxError(IdxError::Kind::kBadMagic, labels_path + ": not an IDX label file");
  }
  const std::uint32_t n_lab = read_u32_be(lab, labels_path);
  if (n_lab != n) {
    std::ostringstream msg;
    msg << labels_path << ": " << n_lab << " labels for " << n << " images";
    throw IdxError(IdxError::Kind::kCountMismatch, msg.str());
  }
  const auto raw_labels = read_payload(lab, n_lab, labels_path);

  DatasetSplit split;
  split.inputs.resize(static_cast<Index>(dim), static_cast<Index>(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      split.inputs(static_cast<Index>(j), static_cast<Index>(i)) =
          double(pixels[std::size_t(i) * dim + j]) / 255.0;
    }
  }
  split.labels.resize(static_cast<Index>(n));
  for (std::uint32_t i = 0; i < n; ++i) split.labels(static_cast<Index>(i)) = raw_labels[i];
  return split;
}

void write_idx(const DatasetSplit& split, const std::string& images_path,
               const std::string& labels_path) {
  if (!split.classification()) {
    throw std::invalid_argument("write_idx: split carries no labels");
  }
  const Index dim = split.dim();
  const Index side = static_cast<Index>(std::lround(std::sqrt(double(dim))));
  if (side * side != dim) {
    throw std::invalid_argument("write_idx: inputs are not square images");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IdxError(IdxError::Kind::kIo, "cannot open " + images_path);
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(split.size()));
  write_u32_be(img, static_cast<std::uint32_t>(side));
  write_u32_be(img, static_cast<std::uint32_t>(side));
  std::vector<unsigned char> buf(static_cast<std::size_t>(dim));
  for (Index i = 0; i < split.size(); ++i) {
    for (Index j = 0; j < dim; ++j) {
      const double v = std::clamp(split.inputs(j, i), 0.0, 1.0);
      buf[static_cast<std::size_t>(j)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(dim));
  }

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError(IdxError::Kind::kIo, "cannot open " + labels_path);
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(split.size()));
  for (Index i = 0; i < split.size(); ++i) {
    const auto b = static_cast<unsigned char>(split.labels(i));
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
}

MnistPair load_mnist_dir(const std::string& dir) {
  MnistPair pair;
  pair.train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  pair.train.tag = "train";
  pair.test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  pair.test.tag = "test";
  return pair;
}

void SyntheticSpec::validate() const {
  if (function_id != 1 && function_id != 2) {
    throw std::invalid_argument("SyntheticSpec: function_id must be 1 or 2");
  }
  const int want = function_id == 1 ? 2 : 5;
  if (input_dim != want) {
    throw std::invalid_argument("SyntheticSpec: function " + std::to_string(function_id) +
                                " takes " + std::to_string(want) + " inputs");
  }
  if (n_train < 2 || n_test < 1 || n_total != n_train + n_test) {
    throw std::invalid_argument("SyntheticSpec: split sizes must satisfy n_total == n_train + n_test");
  }
  if (noise_fraction < 0.0) {
    throw std::invalid_argument("SyntheticSpec: noise_fraction must be >= 0");
  }
}

double synthetic_function(int function_id, const Vec& x) {
  if (function_id == 1) {
    if (x.size() != 2) throw std::invalid_argument("synthetic_function: function 1 takes 2 inputs");
    return std::sin(x(0)) + std::cos(x(1));
  }
  if (function_id == 2) {
    if (x.size() != 5) throw std::invalid_argument("synthetic_function: function 2 takes 5 inputs");
    return std::exp(x(0)) * std::sin(x(1)) + x(2) * std::cos(x(3)) - x(4) * x(0);
  }
  throw std::invalid_argument("synthetic_function: unknown function_id");
}

SyntheticPair generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const Index d = spec.input_dim;

  // Draw order is part of the contract: inputs first (sample-major), then
  // the split permutation, then the train noise. Zero noise_fraction keeps
  // the stream aligned because the noise draws still happen.
  Mat inputs(d, spec.n_total);
  for (Index i = 0; i < spec.n_total; ++i) {
    for (Index j = 0; j < d; ++j) inputs(j, i) = rng.uniform(-1.0, 1.0);
  }
  Vec clean(spec.n_total);
  for (Index i = 0; i < spec.n_total; ++i) {
    clean(i) = synthetic_function(spec.function_id, inputs.col(i));
  }
  const auto perm = rng.permutation(spec.n_total);

  Vec y_train(spec.n_train), y_test(spec.n_test);
  for (Index i = 0; i < spec.n_train; ++i) y_train(i) = clean(perm[static_cast<std::size_t>(i)]);
  for (Index i = 0; i < spec.n_test; ++i) {
    y_test(i) = clean(perm[static_cast<std::size_t>(spec.n_train + i)]);
  }

  const double mean = y_train.mean();
  const double sd = std::sqrt((y_train.array() - mean).square().sum() / double(spec.n_train));
  const double sigma = spec.noise_fraction * sd;
  for (Index i = 0; i < spec.n_train; ++i) y_train(i) += sigma * rng.normal();

  const double y_min = y_train.minCoeff();
  const double y_max = y_train.maxCoeff();
  if (!(y_max > y_min)) {
    throw std::runtime_error("generate_synthetic: degenerate target range");
  }
  const auto normalize = [&](Vec& y) {
    y = (2.0 * (y.array() - y_min) / (y_max - y_min) - 1.0).matrix();
  };
  normalize(y_train);
  normalize(y_test);

  SyntheticPair pair;
  pair.spec = spec;
  pair.train.inputs.resize(d, spec.n_train);
  for (Index i = 0; i < spec.n_train; ++i) {
    pair.train.inputs.col(i) = inputs.col(perm[static_cast<std::size_t>(i)]);
  }
  pair.train.targets = y_train;
  pair.train.tag = "train";
  pair.train.y_min = y_min;
  pair.train.y_max = y_max;

  pair.test.inputs.resize(d, spec.n_test);
  for (Index i = 0; i < spec.n_test; ++i) {
    pair.test.inputs.col(i) = inputs.col(perm[static_cast<std::size_t>(spec.n_train + i)]);
  }
  pair.test.targets = y_test;
  pair.test.tag = "test";
  pair.test.y_min = y_min;
  pair.test.y_max = y_max;
  return pair;
}

double denormalize(const DatasetSplit& split, double normalized) {
  if (!(split.y_max > split.y_min)) {
    throw std::invalid_argument("denormalize: split has no normalization metadata");
  }
  return (normalized + 1.0) / 2.0 * (split.y_max - split.y_min) + split.y_min;
}

Vec denormalize_targets(const DatasetSplit& split) {
  Vec out(split.targets.size());
  for (Index i = 0; i < out.size(); ++i) out(i) = denormalize(split, split.targets(i));
  return out;
}

DatasetSplit mnist_as_regression(const DatasetSplit& split) {
  if (!split.classification()) {
    throw std::invalid_argument("mnist_as_regression: split carries no labels");
  }
  DatasetSplit out;
  out.inputs = split.inputs;
  out.tag = split.tag;
  out.targets.resize(split.size());
  for (Index i = 0; i < split.size(); ++i) {
    const int k = split.labels(i);
    if (k < 0 || k > 9) {
      throw std::invalid_argument("mnist_as_regression: label outside 0..9");
    }
    out.targets(i) = 2.0 * double(k) / 9.0 - 1.0;
  }
  out.y_min = 0.0;
  out.y_max = 9.0;
  return out;
}

DatasetSplit subsample(const DatasetSplit& split, Index n, Rng& rng) {
  if (n < 1 || n > split.size()) {
    throw std::invalid_argument("subsample: n must be in [1, split size]");
  }
  std::vector<Index> picks;
  picks.reserve(static_cast<std::size_t>(n));

  if (split.classification()) {
    const int num_classes = split.labels.maxCoeff() + 1;
    std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
    for (Index i = 0; i < split.size(); ++i) {
      by_class[static_cast<std::size_t>(split.labels(i))].push_back(i);
    }
    // Largest-remainder quotas: floor(n * count / total), leftovers to the
    // largest fractional parts (ties broken by class index).
    const Index total = split.size();
    std::vector<Index> quota(by_class.size());
    std::vector<std::pair<Index, std::size_t>> rem;  // (scaled remainder, class)
    Index assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const Index cnt = static_cast<Index>(by_class[c].size());
      quota[c] = (n * cnt) / total;
      assigned += quota[c];
      rem.emplace_back(n * cnt - quota[c] * total, c);
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (Index k = 0; k < n - assigned; ++k) ++quota[rem[static_cast<std::size_t>(k)].second];

    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const auto order = rng.permutation(static_cast<Index>(by_class[c].size()));
      for (Index k = 0; k < quota[c]; ++k) {
        picks.push_back(by_class[c][static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      }
    }
    const auto shuffle = rng.permutation(n);
    std::vector<Index> shuffled(picks.size());
    for (Index i = 0; i < n; ++i) {
      shuffled[static_cast<std::size_t>(i)] = picks[static_cast<std::size_t>(shuffle[static_cast<std::size_t>(i)])];
    }
    picks = std::move(shuffled);
  } else {
    const auto order = rng.permutation(split.size());
    for (Index i = 0; i < n; ++i) picks.push_back(order[static_cast<std::size_t>(i)]);
  }

  DatasetSplit out;
  out.tag = split.tag;
  out.y_min = split.y_min;
  out.y_max = split.y_max;
  out.inputs.resize(split.dim(), n);
  if (split.classification()) out.labels.resize(n);
  if (split.targets.size() > 0) out.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Index src = picks[static_cast<std::size_t>(i)];
    out.inputs.col(i) = split.inputs.col(src);
    if (split.classification()) out.labels(i) = split.labels(src);
    if (split.targets.size() > 0) out.targets(i) = split.targets(src);
  }
  return out;
}

namespace {

void save_split_csv(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  for (Index j = 0; j < split.dim(); ++j) out << "x" << j << ",";
  out << "y\n";
  for (Index i = 0; i < split.size(); ++i) {
    for (Index j = 0; j < split.dim(); ++j) out << split.inputs(j, i) << ",";
    out << split.targets(i) << "\n";
  }
}

DatasetSplit load_split_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const Index d = static_cast<Index>(std::count(line.begin(), line.end(), ',') );
  std::vector<Vec> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Vec row(d + 1);
    std::string cell;
    for (Index j = 0; j <= d; ++j) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error(path + ": short row");
      row(j) = std::stod(cell);
    }
    rows.push_back(std::move(row));
  }
  DatasetSplit split;
  split.inputs.resize(d, static_cast<Index>(rows.size()));
  split.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    split.inputs.col(static_cast<Index>(i)) = rows[i].head(d);
    split.targets(static_cast<Index>(i)) = rows[i](d);
  }
  return split;
}

}  // namespace

void save_synthetic_csv(const SyntheticPair& pair, const std::string& train_path,
                        const std::string& test_path) {
  save_split_csv(pair.train, train_path);
  save_split_csv(pair.test, test_path);
  nlohmann::json meta;
  meta["function_id"] = pair.spec.function_id;
  meta["input_dim"] = pair.spec.input_dim;
  meta["n_total"] = pair.spec.n_total;
  meta["n_train"] = pair.spec.n_train;
  meta["n_test"] = pair.spec.n_test;
  meta["noise_fraction"] = pair.spec.noise_fraction;
  meta["seed"] = pair.spec.seed;
  meta["y_min"] = pair.train.y_min;
  meta["y_max"] = pair.train.y_max;
  std::ofstream out(train_path + ".json");
  if (!out) throw std::runtime_error("cannot open " + train_path + ".json");
  out << meta.dump(2) << "\n";
}

SyntheticPair load_synthetic_csv(const std::string& train_path, const std::string& test_path) {
  SyntheticPair pair;
  pair.train = load_split_csv(train_path);
  pair.train.tag = "train";
  pair.test = load_split_csv(test_path);
  pair.test.tag = "test";
  std::ifstream in(train_path + ".json");
  if (!in) throw std::runtime_error("cannot open " + train_path + ".json");
  nlohmann::json meta = nlohmann::json::parse(in);
  pair.spec.function_id = meta.at("function_id").get<int>();
  pair.spec.input_dim = meta.at("input_dim").get<int>();
  pair.spec.n_total = meta.at("n_total").get<Index>();
  pair.spec.n_train = meta.at("n_train").get<Index>();
  pair.spec.n_test = meta.at("n_test").get<Index>();
  pair.spec.noise_fraction = meta.at("noise_fraction").get<double>();
  pair.spec.seed = meta.at("seed").get<std::uint64_t>();
  for (auto* split : {&pair.train, &pair.test}) {
    split->y_min = meta.at("y_min").get<double>();
    split->y_max = meta.at("y_max").get<double>();
  }
  return pair;
}

}  // namespace ffzo::data
