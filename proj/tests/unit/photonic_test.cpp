#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "ffzo/photonic.hpp"
#include "ffzo/prototypes.hpp"
#include "ffzo/zoo.hpp"

using namespace ffzo;
using namespace ffzo::photonic;

namespace {

constexpr double kPi = 3.141592653589793238462643383279;

// Full-matrix composition of the mesh: embed each 2x2 cell transfer into a
// d x d identity and multiply in layout order. Independent of the in-place
// pair-update path used by MZIMesh::forward.
CMat compose_mesh_matrix(const MZIMesh& mesh) {
  const int d = mesh.ports();
  CMat M = CMat::Identity(d, d);
  for (const auto& cell : mesh.cells()) {
    CMat E = CMat::Identity(d, d);
    const CMat T = mzi_transfer(cell);
    E.block(cell.top_port, cell.top_port, 2, 2) = T;
    M = E * M;
  }
  return M;
}

CVec random_field(int d, Rng& rng) {
  CVec f(d);
  for (int i = 0; i < d; ++i) f(i) = std::complex<double>(rng.normal(), rng.normal());
  return f;
}

}  // namespace

TEST_SUITE("photonic") {

TEST_CASE("cell transfer matches hand-composed products at pinned phases") {
  const CMat T0 = mzi_transfer(0.0, 0.0, 0.0);
  // B*B = i * swap.
  CHECK(std::abs(T0(0, 0)) < 1e-15);
  CHECK(std::abs(T0(1, 1)) < 1e-15);
  CHECK(std::abs(T0(0, 1) - std::complex<double>(0, 1)) < 1e-15);
  CHECK(std::abs(T0(1, 0) - std::complex<double>(0, 1)) < 1e-15);

  const CMat Tpi = mzi_transfer(kPi, 0.0, 0.0);
  CHECK(std::abs(Tpi(0, 0) - std::complex<double>(-1, 0)) < 1e-15);
  CHECK(std::abs(Tpi(1, 1) - std::complex<double>(1, 0)) < 1e-15);
  CHECK(std::abs(Tpi(0, 1)) < 1e-15);
  CHECK(std::abs(Tpi(1, 0)) < 1e-15);

  // theta = 0 is full cross, theta = pi full bar: the ratio swaps.
  CHECK(std::norm(T0(0, 1)) == doctest::Approx(1.0));
  CHECK(std::norm(T0(0, 0)) == doctest::Approx(0.0));
  CHECK(std::norm(Tpi(0, 0)) == doctest::Approx(1.0));
  CHECK(std::norm(Tpi(0, 1)) == doctest::Approx(0.0));
}

TEST_CASE("cell transfer is unitary for random phases") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const CMat T = mzi_transfer(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    const CMat I = T.adjoint() * T;
    CHECK((I - CMat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("splitting power depends on theta as cos^2(theta/2)") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double theta = rng.uniform(0.0, kPi);
    const CMat T = mzi_transfer(theta, rng.uniform(0, 6), rng.uniform(0, 6));
    CHECK(std::norm(T(0, 0)) == doctest::Approx(std::sin(theta / 2) * std::sin(theta / 2)).epsilon(1e-10));
    CHECK(std::norm(T(0, 1)) == doctest::Approx(std::cos(theta / 2) * std::cos(theta / 2)).epsilon(1e-10));
  }
}

TEST_CASE("rectangular layout has d(d-1)/2 cells on alternating pairs") {
  for (int d : {2, 3, 4, 5, 8, 16}) {
    const MZIMesh mesh(d);
    CHECK(mesh.cell_count() == Index(d) * (d - 1) / 2);
    for (const auto& cell : mesh.cells()) {
      CHECK(cell.top_port % 2 == cell.diag % 2);
      CHECK(cell.top_port + 1 < d);
    }
  }
  CHECK_THROWS_AS(MZIMesh(1), std::invalid_argument);
}

TEST_CASE("zero-phase mesh output is pinned by hand composition") {
  // d = 3, all phases zero, input e1. Cell order (0,1), (1,2), (0,1) with
  // T = i*swap each: (1,0,0) -> (0,i,0) -> (0,0,-1) -> (0,0,-1).
  const MZIMesh mesh(3);
  CVec e1 = CVec::Zero(3);
  e1(0) = 1.0;
  const CVec out = mesh.forward(e1);
  CHECK(std::abs(out(0)) < 1e-15);
  CHECK(std::abs(out(1)) < 1e-15);
  CHECK(std::abs(out(2) - std::complex<double>(-1, 0)) < 1e-15);
}

TEST_CASE("pair-update forward equals the full matrix composition") {
  Rng rng(11);
  for (int d : {2, 3, 5, 8}) {
    MZIMesh mesh(d);
    Vec phases = rng.normal_vec(3 * mesh.cell_count());
    mesh.set_flat_phases(phases);
    const CMat M = compose_mesh_matrix(mesh);
    for (int trial = 0; trial < 5; ++trial) {
      const CVec x = random_field(d, rng);
      const CVec got = mesh.forward(x);
      const CVec want = M * x;
      CHECK((got - want).norm() < 1e-12 * (1.0 + want.norm()));
    }
  }
}

TEST_CASE("mesh forward preserves the field norm") {
  Rng rng(7);
  for (int d : {2, 4, 8, 16}) {
    MZIMesh mesh(d);
    for (int trial = 0; trial < 250; ++trial) {
      mesh.set_flat_phases(rng.normal_vec(3 * mesh.cell_count()) * 3.0);
      const CVec x = random_field(d, rng);
      const double in_norm = x.norm();
      const double out_norm = mesh.forward(x).norm();
      CHECK(std::abs(out_norm - in_norm) < 1e-9 * in_norm);
    }
  }
}

TEST_CASE("two-port mesh is a single cell") {
  Rng rng(9);
  MZIMesh mesh(2);
  Vec phases(3);
  phases << 1.1, 2.2, 3.3;
  mesh.set_flat_phases(phases);
  const CMat T = mzi_transfer(1.1, 2.2, 3.3);
  const CVec x = random_field(2, rng);
  CHECK((mesh.forward(x) - T * x).norm() < 1e-14);
  CHECK_THROWS_AS(mesh.forward(random_field(3, rng)), std::invalid_argument);
}

TEST_CASE("intensity readout conserves total power") {
  Rng rng(13);
  MZIMesh mesh(8);
  mesh.set_flat_phases(rng.normal_vec(3 * mesh.cell_count()));
  const CVec x = random_field(8, rng);
  const Vec I = intensity_readout(mesh.forward(x));
  CHECK(I.minCoeff() >= 0.0);
  CHECK(I.sum() == doctest::Approx(x.squaredNorm()).epsilon(1e-12));
  CHECK(intensity_readout(CVec::Zero(4)).isZero());
}

TEST_CASE("identity-like mesh routes a basis vector to one port") {
  // Zero-phase cells are full-cross swaps, so a basis input exits on
  // exactly one port with unit intensity.
  const MZIMesh mesh(4);
  CVec e0 = CVec::Zero(4);
  e0(0) = 1.0;
  const Vec I = intensity_readout(mesh.forward(e0));
  CHECK(I.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(I.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("electro-optic activation attenuates but never amplifies") {
  const EOParams eo;
  CHECK(eo_activation(CVec::Zero(3), eo).isZero());

  // Quarter-wave bias fully gates a vanishing signal.
  EOParams gated;
  gated.phase_bias = kPi / 2;
  CVec tiny(1);
  tiny(0) = std::complex<double>(1e-9, 0);
  CHECK(std::abs(eo_activation(tiny, gated)(0)) < 1e-12);

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const CVec z = random_field(6, rng);
    EOParams p;
    p.g = rng.uniform(0.1, 3.0);
    p.phase_bias = rng.uniform(0.0, 6.28);
    const CVec out = eo_activation(z, p);
    for (Index i = 0; i < z.size(); ++i) CHECK(std::abs(out(i)) <= std::abs(z(i)) + 1e-15);
  }
}

TEST_CASE("image encoding produces in-phase amplitudes") {
  CHECK(encode_image(Vec::Zero(5)).isZero());

  Vec one_pixel = Vec::Zero(4);
  one_pixel(2) = 0.7;
  const CVec basis = encode_image(one_pixel, true);
  CHECK(std::abs(basis(2) - std::complex<double>(1, 0)) < 1e-15);
  CHECK(basis.norm() == doctest::Approx(1.0));

  Vec img(3);
  img << 0.2, 0.4, 0.1;
  const CVec raw = encode_image(img, false);
  for (Index i = 0; i < 3; ++i) {
    CHECK(raw(i).real() == img(i));
    CHECK(raw(i).imag() == 0.0);
  }
  CHECK(encode_image(img, true).norm() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("block-average downsampling matches a hand-computed grid") {
  Vec img(16);
  for (Index i = 0; i < 16; ++i) img(i) = double(i);
  const Vec out = downsample_image(img, 4, 2);
  CHECK(out.size() == 4);
  CHECK(out(0) == doctest::Approx(2.5));
  CHECK(out(1) == doctest::Approx(4.5));
  CHECK(out(2) == doctest::Approx(10.5));
  CHECK(out(3) == doctest::Approx(12.5));
  CHECK_THROWS_AS(downsample_image(img, 4, 3), std::invalid_argument);
  CHECK_THROWS_AS(downsample_image(img, 5, 1), std::invalid_argument);
}

TEST_CASE("phase wrapping folds theta and wraps phi and gamma") {
  CHECK(wrap_theta(kPi + 0.3) == doctest::Approx(kPi - 0.3).epsilon(1e-14));
  CHECK(wrap_theta(-0.3) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(wrap_theta(2 * kPi + 0.2) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(wrap_theta(0.5) == 0.5);
  CHECK(wrap_circular(2 * kPi + 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wrap_circular(-0.3) == doctest::Approx(2 * kPi - 0.3).epsilon(1e-14));

  // Raw assignment keeps probe values; a commit canonicalizes them.
  MZIMesh mesh(2);
  Vec probe(3);
  probe << kPi + 0.4, -1.0, 7.0;
  mesh.set_flat_phases(probe);
  CHECK(mesh.flat_phases() == probe);
  mesh.commit_flat_phases(probe);
  const Vec committed = mesh.flat_phases();
  CHECK(committed(0) == doctest::Approx(kPi - 0.4).epsilon(1e-14));
  CHECK(committed(1) == doctest::Approx(2 * kPi - 1.0).epsilon(1e-14));
  CHECK(committed(2) == doctest::Approx(7.0 - 2 * kPi).epsilon(1e-12));
  CHECK(committed(0) >= 0.0);
  CHECK(committed(0) <= kPi);
}

TEST_CASE("circular wrap of phi and gamma preserves the transfer") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const double theta = rng.uniform(0, kPi);
    const double phi = rng.uniform(-20, 20);
    const double gamma = rng.uniform(-20, 20);
    const CMat A = mzi_transfer(theta, phi, gamma);
    const CMat B = mzi_transfer(theta, wrap_circular(phi), wrap_circular(gamma));
    CHECK((A - B).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Folding theta keeps the power split even though phases move.
  const CMat A = mzi_transfer(kPi + 0.7, 0.3, 0.1);
  const CMat B = mzi_transfer(wrap_theta(kPi + 0.7), 0.3, 0.1);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      CHECK(std::norm(A(r, c)) == doctest::Approx(std::norm(B(r, c))).epsilon(1e-10));
    }
  }
}

TEST_CASE("network stages chain through the opaque activation") {
  Rng rng(23);
  MeshNetwork net(4, 3);
  net.init_phases(rng);

  // Ranges of the seeded initialization.
  for (int k = 0; k < 3; ++k) {
    for (const auto& cell : net.mesh(k).cells()) {
      CHECK(cell.theta >= 0.0);
      CHECK(cell.theta < kPi);
      CHECK(cell.phi >= 0.0);
      CHECK(cell.phi < 2 * kPi);
      CHECK(cell.gamma >= 0.0);
      CHECK(cell.gamma < 2 * kPi);
    }
  }

  const CVec x = encode_image(Vec::Ones(4));
  net.activation().reset_counter();
  const CVec in2 = net.stage_input(x, 2);
  CHECK(net.activation().forward_calls() == 2);

  // Manual chain equals the staged helpers.
  const EOParams eo;
  CVec manual = net.mesh(0).forward(x);
  manual = eo_activation(manual, eo);
  manual = net.mesh(1).forward(manual);
  manual = eo_activation(manual, eo);
  CHECK((in2 - manual).norm() < 1e-14);
  const CVec out = net.forward(x);
  CHECK((out - net.mesh(2).forward(manual)).norm() < 1e-14);

  CHECK_THROWS_AS(net.stage_input(x, 3), std::invalid_argument);
}

TEST_CASE("flat phase view round trips across meshes") {
  Rng rng(29);
  MeshNetwork net(4, 2);
  net.init_phases(rng);
  const Vec v = net.flat_phases();
  CHECK(v.size() == 2 * 3 * 6);
  MeshNetwork other(4, 2);
  other.set_flat_phases(v);
  CHECK(other.flat_phases() == v);
  // Mesh 0's cells occupy the front of the view.
  CHECK(v.head(18) == net.mesh(0).flat_phases());
  CHECK_THROWS_AS(other.set_flat_phases(Vec::Zero(5)), std::invalid_argument);
}

TEST_CASE("aligned prototype scores goodness near one") {
  Rng rng(31);
  MZIMesh mesh(6);
  mesh.set_flat_phases(rng.normal_vec(3 * mesh.cell_count()));
  const CVec x = encode_image(Vec::Ones(6) * 0.5);
  const Vec I = intensity_readout(mesh.forward(x));
  Mat protos(6, 2);
  protos.col(0) = I / I.norm();
  protos.col(1) = -protos.col(0);
  const Vec scores = photonic_scores(mesh, x, protos);
  CHECK(scores(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scores(1) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer objective is zero when every sample clears the margin") {
  Rng rng(37);
  MeshNetwork net(4, 1);
  net.init_phases(rng);
  const CVec x = encode_image(Vec::Ones(4));
  const Vec I = intensity_readout(net.mesh(0).forward(x));

  CMat batch(4, 2);
  batch.col(0) = x;
  batch.col(1) = x;
  VecI labels(2);
  labels << 0, 0;
  Mat protos(4, 2);
  protos.col(0) = I / I.norm();
  protos.col(1) = -protos.col(0);
  ClassificationObjectiveConfig cfg;
  CHECK(photonic_ff_objective(net, 0, batch, labels, protos, cfg) == doctest::Approx(0.0));

  // Pointing the true prototype away makes the hinge bite.
  labels << 1, 1;
  CHECK(photonic_ff_objective(net, 0, batch, labels, protos, cfg) < -1.0);

  VecI bad(1);
  bad << 0;
  CHECK_THROWS_AS(photonic_ff_objective(net, 0, batch, bad, protos, cfg), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves phases bit-identical") {
  Rng rng(41);
  MeshNetwork net(4, 1);
  net.init_phases(rng);
  const Vec omega0 = net.flat_phases();

  CMat batch(4, 2);
  batch.col(0) = encode_image((Vec(4) << 1, 0, 0.5, 0).finished());
  batch.col(1) = encode_image((Vec(4) << 0, 1, 0, 0.5).finished());
  VecI labels(2);
  labels << 0, 1;
  const auto protos = proto::make_prototypes(2, 4, rng);
  ClassificationObjectiveConfig cfg;

  MeshNetwork probe = net;
  const auto objective = [&](const Vec& v) {
    probe.set_flat_phases(v);
    return photonic_ff_objective(probe, 0, batch, labels, protos.vectors, cfg);
  };
  zoo::DDConfig dd;
  dd.learning_rate = 0.0;
  dd.directions = 2;
  const Vec omega1 = zoo::dd_step(objective, omega0, dd, rng);
  CHECK(omega1 == omega0);
}

TEST_CASE("directional steps improve the layer objective on a small mesh") {
  Rng rng(43);
  MeshNetwork net(4, 1);
  net.init_phases(rng);

  CMat batch(4, 8);
  VecI labels(8);
  for (Index b = 0; b < 8; ++b) {
    Vec img = Vec::Zero(4);
    const int cls = static_cast<int>(b % 2);
    img(cls == 0 ? 0 : 2) = 1.0;
    img(cls == 0 ? 1 : 3) = 0.3 + 0.05 * double(b);
    batch.col(b) = encode_image(img);
    labels(b) = cls;
  }
  const auto protos = proto::make_prototypes(2, 4, rng);
  ClassificationObjectiveConfig cfg;

  MeshNetwork probe = net;
  const auto objective = [&](const Vec& v) {
    probe.set_flat_phases(v);
    return photonic_ff_objective(probe, 0, batch, labels, protos.vectors, cfg);
  };

  zoo::DDConfig dd;
  dd.learning_rate = 0.05;
  dd.directions = 4;
  Vec omega = net.flat_phases();
  const double before = objective(omega);
  for (int step = 0; step < 300; ++step) {
    omega = zoo::dd_step(objective, omega, dd, rng);
    net.commit_flat_phases(omega);
    omega = net.flat_phases();
  }
  const double after = objective(omega);
  CHECK(after > before);
  // Canonical ranges hold after every commit.
  for (const auto& cell : net.mesh(0).cells()) {
    CHECK(cell.theta >= 0.0);
    CHECK(cell.theta <= kPi);
    CHECK(cell.phi >= 0.0);
    CHECK(cell.phi < 2 * kPi);
  }
}

TEST_CASE("mesh checkpoint csv round trips bit-exactly") {
  Rng rng(47);
  MeshNetwork net(5, 2);
  net.init_phases(rng);
  const auto dir = std::filesystem::temp_directory_path() / "ffzo_photonic_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "mesh.csv").string();
  save_mesh_csv(net, path);

  MeshNetwork back(5, 2);
  load_mesh_csv(back, path);
  CHECK(back.flat_phases() == net.flat_phases());

  MeshNetwork wrong(4, 2);
  CHECK_THROWS_AS(load_mesh_csv(wrong, path), std::runtime_error);
  MeshNetwork too_many(5, 3);
  CHECK_THROWS_AS(load_mesh_csv(too_many, path), std::runtime_error);
}

}  // TEST_SUITE("photonic")
