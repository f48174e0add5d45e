#include "ffzo/photonic.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ffzo::photonic {
namespace {

constexpr double kPi = 3.141592653589793238462643383279;
constexpr double kTwoPi = 2.0 * kPi;
constexpr std::complex<double> kI{0.0, 1.0};

}  // namespace

CMat mzi_transfer(double theta, double phi, double gamma) {
  CMat B(2, 2);
  const double r = 1.0 / std::sqrt(2.0);
  B << r, r * kI, r * kI, r;
  CMat P = CMat::Identity(2, 2);
  P(0, 0) = std::exp(kI * theta);
  CMat Q = CMat::Identity(2, 2);
  Q(0, 0) = std::exp(kI * phi);
  CMat G = CMat::Identity(2, 2);
  G(0, 0) = std::exp(kI * gamma);
  return B * P * B * Q * G;
}

double wrap_theta(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  return t > kPi ? kTwoPi - t : t;
}

double wrap_circular(double a) {
  double t = std::fmod(a, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  return t;
}

MZIMesh::MZIMesh(int ports) : ports_(ports) {
  if (ports < 2) throw std::invalid_argument("MZIMesh: need at least 2 ports");
  for (int col = 0; col < ports; ++col) {
    int idx = 0;
    for (int top = col % 2; top + 1 < ports; top += 2, ++idx) {
      MZICell c;
      c.diag = col;
      c.idx = idx;
      c.top_port = top;
      cells_.push_back(c);
    }
  }
  // Rectangular layout covers all port pairs exactly once per period.
  if (cell_count() != Index(ports) * (ports - 1) / 2) {
    throw std::logic_error("MZIMesh: layout cell count mismatch");
  }
}

Vec MZIMesh::flat_phases() const {
  Vec v(3 * cell_count());
  for (Index c = 0; c < cell_count(); ++c) {
    const auto& cell = cells_[static_cast<std::size_t>(c)];
    v(3 * c) = cell.theta;
    v(3 * c + 1) = cell.phi;
    v(3 * c + 2) = cell.gamma;
  }
  return v;
}

void MZIMesh::set_flat_phases(const Vec& v) {
  if (v.size() != 3 * cell_count()) {
    throw std::invalid_argument("MZIMesh: flat phase vector has wrong length");
  }
  for (Index c = 0; c < cell_count(); ++c) {
    auto& cell = cells_[static_cast<std::size_t>(c)];
    cell.theta = v(3 * c);
    cell.phi = v(3 * c + 1);
    cell.gamma = v(3 * c + 2);
  }
}

void MZIMesh::commit_flat_phases(const Vec& v) {
  set_flat_phases(v);
  for (auto& cell : cells_) {
    cell.theta = wrap_theta(cell.theta);
    cell.phi = wrap_circular(cell.phi);
    cell.gamma = wrap_circular(cell.gamma);
  }
}

CVec MZIMesh::forward(const CVec& field) const {
  if (field.size() != ports_) {
    throw std::invalid_argument("MZIMesh: field length does not match port count");
  }
  CVec out = field;
  for (const auto& cell : cells_) {
    const CMat T = mzi_transfer(cell);
    const std::complex<double> a = out(cell.top_port);
    const std::complex<double> b = out(cell.top_port + 1);
    out(cell.top_port) = T(0, 0) * a + T(0, 1) * b;
    out(cell.top_port + 1) = T(1, 0) * a + T(1, 1) * b;
  }
  return out;
}

Vec intensity_readout(const CVec& field) {
  Vec out(field.size());
  for (Index i = 0; i < field.size(); ++i) out(i) = std::norm(field(i));
  return out;
}

CVec eo_activation(const CVec& field, const EOParams& p) {
  CVec out(field.size());
  for (Index i = 0; i < field.size(); ++i) {
    const double power = std::norm(field(i));
    out(i) = field(i) * std::cos(p.g * power + p.phase_bias);
  }
  return out;
}

CVec encode_image(const Vec& pixels, bool normalize) {
  CVec field(pixels.size());
  for (Index i = 0; i < pixels.size(); ++i) field(i) = std::complex<double>(pixels(i), 0.0);
  if (normalize) {
    const double n = field.norm();
    if (n > 0.0) field /= n;
  }
  return field;
}

Vec downsample_image(const Vec& pixels, int side, int factor) {
  if (side < 1 || factor < 1 || side % factor != 0) {
    throw std::invalid_argument("downsample_image: factor must divide the side");
  }
  if (pixels.size() != Index(side) * side) {
    throw std::invalid_argument("downsample_image: pixel count is not side^2");
  }
  const int out_side = side / factor;
  Vec out = Vec::Zero(Index(out_side) * out_side);
  for (int row = 0; row < side; ++row) {
    for (int col = 0; col < side; ++col) {
      out((row / factor) * out_side + (col / factor)) += pixels(row * side + col);
    }
  }
  out /= double(factor) * factor;
  return out;
}

MeshNetwork::MeshNetwork(int ports, int num_meshes, EOParams eo)
    : ports_(ports),
      act_([eo](const CVec& z) { return eo_activation(z, eo); }) {
  if (num_meshes < 1) throw std::invalid_argument("MeshNetwork: need at least one mesh");
  for (int k = 0; k < num_meshes; ++k) meshes_.emplace_back(ports);
}

CVec MeshNetwork::stage_input(const CVec& encoded, int k) const {
  if (k < 0 || k >= num_meshes()) throw std::invalid_argument("MeshNetwork: stage out of range");
  CVec field = encoded;
  for (int j = 0; j < k; ++j) field = act_(meshes_[static_cast<std::size_t>(j)].forward(field));
  return field;
}

CVec MeshNetwork::stage_output_from(const CVec& stage_in, int k) const {
  if (k < 0 || k >= num_meshes()) throw std::invalid_argument("MeshNetwork: stage out of range");
  return meshes_[static_cast<std::size_t>(k)].forward(stage_in);
}

CVec MeshNetwork::forward(const CVec& encoded) const {
  return stage_output_from(stage_input(encoded, num_meshes() - 1), num_meshes() - 1);
}

void MeshNetwork::init_phases(Rng& rng) {
  for (auto& mesh : meshes_) {
    for (auto& cell : mesh.cells()) {
      cell.theta = rng.uniform(0.0, kPi);
      cell.phi = rng.uniform(0.0, kTwoPi);
      cell.gamma = rng.uniform(0.0, kTwoPi);
    }
  }
}

Vec MeshNetwork::flat_phases() const {
  Index total = 0;
  for (const auto& mesh : meshes_) total += 3 * mesh.cell_count();
  Vec v(total);
  Index at = 0;
  for (const auto& mesh : meshes_) {
    v.segment(at, 3 * mesh.cell_count()) = mesh.flat_phases();
    at += 3 * mesh.cell_count();
  }
  return v;
}

void MeshNetwork::set_flat_phases(const Vec& v) {
  Index at = 0;
  for (auto& mesh : meshes_) {
    const Index len = 3 * mesh.cell_count();
    if (at + len > v.size()) throw std::invalid_argument("MeshNetwork: flat phase vector too short");
    mesh.set_flat_phases(v.segment(at, len));
    at += len;
  }
  if (at != v.size()) throw std::invalid_argument("MeshNetwork: flat phase vector too long");
}

void MeshNetwork::commit_flat_phases(const Vec& v) {
  set_flat_phases(v);
  for (auto& mesh : meshes_) mesh.commit_flat_phases(mesh.flat_phases());
}

double photonic_ff_objective(const MeshNetwork& net, int stage, const CMat& stage_inputs,
                             const VecI& labels, const Mat& prototypes,
                             const ClassificationObjectiveConfig& cfg) {
  if (stage_inputs.cols() != labels.size()) {
    throw std::invalid_argument("photonic_ff_objective: batch size mismatch");
  }
  if (stage_inputs.cols() == 0) {
    throw std::invalid_argument("photonic_ff_objective: empty batch");
  }
  const int num_classes = static_cast<int>(prototypes.cols());
  double total = 0.0;
  for (Index b = 0; b < stage_inputs.cols(); ++b) {
    const Vec scores = photonic_scores(net.mesh(stage), stage_inputs.col(b), prototypes);
    if (cfg.mode == ObjectiveMode::kMargin) {
      total -= margin_loss(scores, labels(b), cfg.margin);
    } else {
      total += alpha_objective(scores, labels(b), cfg.resolved_alpha(num_classes));
    }
  }
  return total / double(stage_inputs.cols());
}

Vec photonic_scores(const MZIMesh& mesh, const CVec& field, const Mat& prototypes) {
  const Vec intensities = intensity_readout(mesh.forward(field));
  if (prototypes.rows() != intensities.size()) {
    throw std::invalid_argument("photonic_scores: prototype dimension mismatch");
  }
  Vec scores(prototypes.cols());
  for (Index c = 0; c < prototypes.cols(); ++c) {
    scores(c) = ffzo::goodness(intensities, prototypes.col(c));
  }
  return scores;
}

void save_mesh_csv(const MeshNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  out << "mesh,diag,cell,theta,phi,gamma\n";
  for (int k = 0; k < net.num_meshes(); ++k) {
    for (const auto& cell : net.mesh(k).cells()) {
      out << k << "," << cell.diag << "," << cell.idx << "," << cell.theta << ","
          << cell.phi << "," << cell.gamma << "\n";
    }
  }
}

void load_mesh_csv(MeshNetwork& net, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "mesh,diag,cell,theta,phi,gamma") {
    throw std::runtime_error(path + ": not a mesh checkpoint");
  }
  std::vector<std::array<double, 6>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::array<double, 6> row{};
    std::string cell;
    for (int j = 0; j < 6; ++j) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error(path + ": short row");
      row[static_cast<std::size_t>(j)] = std::stod(cell);
    }
    rows.push_back(row);
  }
  std::size_t at = 0;
  for (int k = 0; k < net.num_meshes(); ++k) {
    for (auto& cell : net.mesh(k).cells()) {
      if (at >= rows.size()) throw std::runtime_error(path + ": too few rows for this geometry");
      const auto& row = rows[at++];
      if (int(row[0]) != k || int(row[1]) != cell.diag || int(row[2]) != cell.idx) {
        throw std::runtime_error(path + ": row does not match the network layout");
      }
      cell.theta = row[3];
      cell.phi = row[4];
      cell.gamma = row[5];
    }
  }
  if (at != rows.size()) throw std::runtime_error(path + ": too many rows for this geometry");
}

}  // namespace ffzo::photonic
