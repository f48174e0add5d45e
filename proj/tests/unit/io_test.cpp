#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ffzo/infer.hpp"
#include "ffzo/io.hpp"
#include "ffzo/nn.hpp"

using namespace ffzo;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("ffzo-io-" + name + ".json");
}

bool same_vec(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

bool same_mat(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("dense classification checkpoint round trips bitwise") {
  Rng rng(11);
  const auto spec = nn::mlp_classification_spec(6, 5, 2, 3);
  auto m = nn::init_parameters(spec, rng);
  const auto bank = infer::make_class_bank(m, 3, rng);

  const auto path = temp_file("dense");
  io::save_checkpoint({m, bank, std::nullopt}, path.string());
  const auto loaded = io::load_checkpoint(path.string());

  CHECK(same_vec(loaded.model.global_flat(), m.global_flat()));
  REQUIRE(loaded.class_bank.has_value());
  CHECK_FALSE(loaded.regression_bank.has_value());
  REQUIRE(loaded.class_bank->per_unit.size() == bank.per_unit.size());
  for (std::size_t u = 0; u < bank.per_unit.size(); ++u) {
    CHECK(same_mat(loaded.class_bank->per_unit[u], bank.per_unit[u]));
  }

  Rng probe_rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    const Vec x = probe_rng.normal_vec(6);
    const auto a = nn::forward_with_taps(m, x);
    const auto b = nn::forward_with_taps(loaded.model, x);
    CHECK(same_vec(a.output, b.output));
    REQUIRE(a.taps.size() == b.taps.size());
    for (std::size_t u = 0; u < a.taps.size(); ++u) CHECK(same_vec(a.taps[u], b.taps[u]));
  }
  fs::remove(path);
}

TEST_CASE("conv checkpoint preserves frozen projections") {
  nn::ModelSpec spec;
  spec.input_channels = 1;
  spec.input_h = 8;
  spec.input_w = 8;
  spec.num_classes = 3;
  nn::StageSpec conv;
  conv.kind = nn::StageKind::kConv;
  conv.out_channels = 2;
  conv.kernel_h = 3;
  conv.kernel_w = 3;
  conv.proj_dim = 4;
  spec.stages.push_back(conv);
  spec.stages.push_back({.kind = nn::StageKind::kActivation});
  spec.stages.push_back({.kind = nn::StageKind::kMaxPool});
  spec.stages.push_back({.kind = nn::StageKind::kFlatten});
  nn::StageSpec head;
  head.kind = nn::StageKind::kDense;
  head.out_dim = 3;
  spec.stages.push_back(head);

  Rng rng(5);
  auto m = nn::init_parameters(spec, rng);
  const auto bank = infer::make_class_bank(m, 3, rng);

  const auto path = temp_file("conv");
  io::save_checkpoint({m, bank, std::nullopt}, path.string());
  const auto loaded = io::load_checkpoint(path.string());

  CHECK(same_vec(loaded.model.global_flat(), m.global_flat()));
  for (std::size_t s = 0; s < m.stages().size(); ++s) {
    REQUIRE(loaded.model.stages()[s].projections.size() == m.stages()[s].projections.size());
    for (std::size_t p = 0; p < m.stages()[s].projections.size(); ++p) {
      CHECK(same_mat(loaded.model.stages()[s].projections[p], m.stages()[s].projections[p]));
    }
  }

  Rng probe_rng(42);
  Vec x(64);
  for (Index i = 0; i < x.size(); ++i) x(i) = probe_rng.uniform();
  const auto a = nn::forward_with_taps(m, x);
  const auto b = nn::forward_with_taps(loaded.model, x);
  CHECK(same_vec(a.output, b.output));
  for (std::size_t u = 0; u < a.taps.size(); ++u) CHECK(same_vec(a.taps[u], b.taps[u]));
  fs::remove(path);
}

TEST_CASE("regression checkpoint keeps the direction bank") {
  Rng rng(3);
  const auto spec = nn::mlp_regression_ff_spec(4, 6, 2);
  auto m = nn::init_parameters(spec, rng);
  const auto bank = infer::make_regression_bank(m, rng);

  const auto path = temp_file("reg");
  io::save_checkpoint({m, std::nullopt, bank}, path.string());
  const auto loaded = io::load_checkpoint(path.string());

  CHECK_FALSE(loaded.class_bank.has_value());
  REQUIRE(loaded.regression_bank.has_value());
  REQUIRE(loaded.regression_bank->per_unit.size() == bank.per_unit.size());
  for (std::size_t u = 0; u < bank.per_unit.size(); ++u) {
    CHECK(same_vec(loaded.regression_bank->per_unit[u], bank.per_unit[u]));
  }
  fs::remove(path);
}

TEST_CASE("exactly one bank is enforced") {
  Rng rng(1);
  const auto spec = nn::mlp_classification_spec(3, 2, 1, 2);
  auto m = nn::init_parameters(spec, rng);
  const auto cbank = infer::make_class_bank(m, 2, rng);
  const auto rbank = infer::make_regression_bank(m, rng);

  const auto path = temp_file("banks");
  CHECK_THROWS_AS(io::save_checkpoint({m, std::nullopt, std::nullopt}, path.string()),
                  std::invalid_argument);
  CHECK_THROWS_AS(io::save_checkpoint({m, cbank, rbank}, path.string()),
                  std::invalid_argument);
}

TEST_CASE("tampered checkpoints are rejected") {
  Rng rng(8);
  const auto spec = nn::mlp_classification_spec(3, 2, 1, 2);
  auto m = nn::init_parameters(spec, rng);
  const auto bank = infer::make_class_bank(m, 2, rng);

  const auto path = temp_file("tamper");
  io::save_checkpoint({m, bank, std::nullopt}, path.string());
  const std::string original = slurp(path);

  auto wrong_version = original;
  const auto pos = wrong_version.find("ffzo-checkpoint-1");
  REQUIRE(pos != std::string::npos);
  wrong_version.replace(pos, 17, "ffzo-checkpoint-9");
  spit(path, wrong_version);
  CHECK_THROWS_AS(io::load_checkpoint(path.string()), std::runtime_error);

  fs::remove(path);
  CHECK_THROWS_AS(io::load_checkpoint(path.string()), std::runtime_error);
}

}  // TEST_SUITE
