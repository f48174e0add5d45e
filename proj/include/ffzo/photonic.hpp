#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ffzo/goodness.hpp"
#include "ffzo/types.hpp"

// Programmable photonic linear layer: rectangular MZI mesh with intensity
// readout and an opaque electro-optic-style nonlinearity. Phases are the
// trainable parameters; the forward map is unitary by construction.

namespace ffzo::photonic {

struct MZICell {
  double theta = 0.0;  // internal phase, canonical range [0, pi]
  double phi = 0.0;    // external phase, canonical range [0, 2pi)
  double gamma = 0.0;  // input phase, canonical range [0, 2pi)
  int diag = 0;        // column in the rectangular layout
  int idx = 0;         // cell index within the column (top to bottom)
  int top_port = 0;    // the cell couples ports (top_port, top_port + 1)
};

/// 2x2 transfer matrix B P(theta) B P(phi) G(gamma) with
/// B = (1/sqrt 2) [[1, i], [i, 1]], P(a) = diag(e^{ia}, 1),
/// G(g) = diag(e^{ig}, 1). Unitary for any phases.
CMat mzi_transfer(double theta, double phi, double gamma);
inline CMat mzi_transfer(const MZICell& c) { return mzi_transfer(c.theta, c.phi, c.gamma); }

/// theta folds reflectively into [0, pi]; phi and gamma wrap modulo 2pi.
double wrap_theta(double theta);
double wrap_circular(double a);

class MZIMesh {
 public:
  /// Rectangular layout on `ports` waveguides: column k holds cells on port
  /// pairs (i, i+1) for i = k % 2, k % 2 + 2, ...; d(d-1)/2 cells total.
  /// All phases start at zero.
  explicit MZIMesh(int ports);

  int ports() const { return ports_; }
  Index cell_count() const { return static_cast<Index>(cells_.size()); }
  const std::vector<MZICell>& cells() const { return cells_; }
  std::vector<MZICell>& cells() { return cells_; }

  /// Flat parameter view: (theta, phi, gamma) per cell in layout order.
  Vec flat_phases() const;
  /// Raw assignment, used while probing the objective; no wrapping.
  void set_flat_phases(const Vec& v);
  /// Assignment at a training step: wraps every phase into its canonical
  /// range (theta reflectively, phi and gamma modulo 2pi).
  void commit_flat_phases(const Vec& v);

  /// Applies the cells column by column. Preserves the L2 norm.
  CVec forward(const CVec& field) const;

 private:
  int ports_;
  std::vector<MZICell> cells_;
};

/// Per-port optical power |amplitude|^2.
Vec intensity_readout(const CVec& field);

struct EOParams {
  double g = 1.5707963267948966;  // pi/2
  double phase_bias = 0.0;
};

/// Intensity-dependent per-mode transmission z * cos(g |z|^2 + phase_bias).
/// Never amplifies: |out| <= |in| per mode.
CVec eo_activation(const CVec& field, const EOParams& p);

/// Pixels in [0, 1] become real nonnegative amplitudes (zero phase);
/// normalized to unit L2 norm by default. A black image stays zero.
CVec encode_image(const Vec& pixels, bool normalize = true);

/// Block-average pooling of a square image by an integer factor.
Vec downsample_image(const Vec& pixels, int side, int factor);

/// Opaque nonlinearity handle. Training code only ever calls operator();
/// there is deliberately no derivative member, and forward calls are
/// counted so tests can audit what the optimizer touched.
class ComplexActivationBox {
 public:
  explicit ComplexActivationBox(std::function<CVec(const CVec&)> fn) : fn_(std::move(fn)) {}

  CVec operator()(const CVec& z) const {
    ++calls_;
    return fn_(z);
  }
  std::uint64_t forward_calls() const { return calls_; }
  void reset_counter() const { calls_ = 0; }

 private:
  std::function<CVec(const CVec&)> fn_;
  mutable std::uint64_t calls_ = 0;
};

/// Stack of meshes with the opaque nonlinearity between consecutive meshes:
/// mesh_0 -> act -> mesh_1 -> ... -> mesh_{K-1}.
class MeshNetwork {
 public:
  MeshNetwork(int ports, int num_meshes, EOParams eo = {});

  int ports() const { return ports_; }
  int num_meshes() const { return static_cast<int>(meshes_.size()); }
  MZIMesh& mesh(int k) { return meshes_.at(static_cast<std::size_t>(k)); }
  const MZIMesh& mesh(int k) const { return meshes_.at(static_cast<std::size_t>(k)); }
  const ComplexActivationBox& activation() const { return act_; }

  /// Field entering mesh k: the encoded input for k = 0, otherwise the
  /// activated output of mesh k-1.
  CVec stage_input(const CVec& encoded, int k) const;
  /// Output field of mesh k given its input field.
  CVec stage_output_from(const CVec& stage_in, int k) const;
  /// Output field of the last mesh.
  CVec forward(const CVec& encoded) const;

  /// theta ~ U[0, pi), phi and gamma ~ U[0, 2pi), in layout order.
  void init_phases(Rng& rng);

  /// Flat view over all meshes (mesh 0 cells first).
  Vec flat_phases() const;
  void set_flat_phases(const Vec& v);
  void commit_flat_phases(const Vec& v);

 private:
  int ports_;
  std::vector<MZIMesh> meshes_;
  ComplexActivationBox act_;
};

/// Mean layer-local classification objective (ascent orientation) of mesh
/// `stage` over a batch: goodness of the stage's intensity readout against
/// the prototypes, margin losses negated. `stage_inputs` columns are the
/// fields entering that mesh, so frozen upstream stages are evaluated once.
double photonic_ff_objective(const MeshNetwork& net, int stage, const CMat& stage_inputs,
                             const VecI& labels, const Mat& prototypes,
                             const ClassificationObjectiveConfig& cfg);

/// Class-goodness scores of one field after a given mesh.
Vec photonic_scores(const MZIMesh& mesh, const CVec& field, const Mat& prototypes);

/// Phase checkpoint: one CSV row per cell, (mesh, diag, cell, theta, phi,
/// gamma). Loading requires a network of matching geometry.
void save_mesh_csv(const MeshNetwork& net, const std::string& path);
void load_mesh_csv(MeshNetwork& net, const std::string& path);

}  // namespace ffzo::photonic
