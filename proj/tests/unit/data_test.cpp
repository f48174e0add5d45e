#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ffzo/data.hpp"

using namespace ffzo;
using namespace ffzo::data;

namespace {

std::filesystem::path test_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "ffzo_data_test";
  std::filesystem::create_directories(dir);
  return dir;
}

DatasetSplit tiny_split() {
  // 4x4 images with pixel values on the 1/255 grid so quantization is exact.
  DatasetSplit s;
  s.inputs.resize(16, 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 16; ++j) {
      s.inputs(j, i) = double((j * 7 + i * 31) % 256) / 255.0;
    }
  }
  s.labels.resize(3);
  s.labels << 2, 0, 9;
  return s;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("idx round trip is exact on the byte grid") {
  const auto dir = test_dir();
  const auto split = tiny_split();
  write_idx(split, (dir / "img").string(), (dir / "lab").string());
  const auto back = load_idx((dir / "img").string(), (dir / "lab").string());
  CHECK(back.inputs == split.inputs);
  CHECK(back.labels == split.labels);
}

TEST_CASE("idx loader distinguishes failure modes") {
  const auto dir = test_dir();
  const auto img = (dir / "bad_img").string();
  const auto lab = (dir / "bad_lab").string();

  SUBCASE("missing file") {
    try {
      load_idx((dir / "nope").string(), lab);
      FAIL("expected IdxError");
    } catch (const IdxError& e) {
      CHECK(e.kind() == IdxError::Kind::kIo);
    }
  }
  SUBCASE("bad magic") {
    std::vector<unsigned char> bytes;
    append(bytes, be32(0xdeadbeef));
    append(bytes, be32(1));
    append(bytes, be32(2));
    append(bytes, be32(2));
    bytes.resize(bytes.size() + 4, 0);
    write_bytes(img, bytes);
    try {
      load_idx(img, lab);
      FAIL("expected IdxError");
    } catch (const IdxError& e) {
      CHECK(e.kind() == IdxError::Kind::kBadMagic);
    }
  }
  SUBCASE("truncated payload") {
    std::vector<unsigned char> bytes;
    append(bytes, be32(0x00000803));
    append(bytes, be32(10));  // promises 10 images
    append(bytes, be32(2));
    append(bytes, be32(2));
    bytes.resize(bytes.size() + 7, 0);  // delivers fewer than 40 pixels
    write_bytes(img, bytes);
    try {
      load_idx(img, lab);
      FAIL("expected IdxError");
    } catch (const IdxError& e) {
      CHECK(e.kind() == IdxError::Kind::kTruncated);
    }
  }
  SUBCASE("count mismatch") {
    std::vector<unsigned char> bytes;
    append(bytes, be32(0x00000803));
    append(bytes, be32(2));
    append(bytes, be32(2));
    append(bytes, be32(2));
    bytes.resize(bytes.size() + 8, 0);
    write_bytes(img, bytes);
    std::vector<unsigned char> lbytes;
    append(lbytes, be32(0x00000801));
    append(lbytes, be32(3));  // 3 labels for 2 images
    lbytes.resize(lbytes.size() + 3, 0);
    write_bytes(lab, lbytes);
    try {
      load_idx(img, lab);
      FAIL("expected IdxError");
    } catch (const IdxError& e) {
      CHECK(e.kind() == IdxError::Kind::kCountMismatch);
    }
  }
}

TEST_CASE("synthetic target functions match hand-computed values") {
  Vec x2(2);
  x2 << 0.3, -0.2;
  CHECK(synthetic_function(1, x2) == doctest::Approx(1.275586785).epsilon(1e-8));
  Vec x5(5);
  x5 << 0.1, 0.2, 0.3, 0.4, 0.5;
  CHECK(synthetic_function(2, x5) == doctest::Approx(0.445881904).epsilon(1e-6));
  CHECK_THROWS_AS(synthetic_function(1, x5), std::invalid_argument);
  CHECK_THROWS_AS(synthetic_function(3, x2), std::invalid_argument);
}

TEST_CASE("synthetic generation is reproducible and normalized") {
  SyntheticSpec spec;
  spec.seed = 17;
  Rng a(spec.seed), b(spec.seed);
  const auto p1 = generate_synthetic(spec, a);
  const auto p2 = generate_synthetic(spec, b);
  CHECK(p1.train.inputs == p2.train.inputs);
  CHECK(p1.train.targets == p2.train.targets);
  CHECK(p1.test.inputs == p2.test.inputs);
  CHECK(p1.test.targets == p2.test.targets);

  CHECK(p1.train.size() == 10000);
  CHECK(p1.test.size() == 2000);
  CHECK(p1.train.dim() == 2);
  CHECK(p1.train.tag == "train");
  CHECK(p1.test.tag == "test");
  // The noisy train extremes define the map, so they land exactly on +-1.
  CHECK(p1.train.targets.minCoeff() == -1.0);
  CHECK(p1.train.targets.maxCoeff() == 1.0);
  CHECK(p1.test.y_min == p1.train.y_min);
  CHECK(p1.test.y_max == p1.train.y_max);
  CHECK(p1.train.inputs.minCoeff() >= -1.0);
  CHECK(p1.train.inputs.maxCoeff() <= 1.0);
}

TEST_CASE("turning noise off changes only the train targets") {
  SyntheticSpec noisy;
  noisy.seed = 5;
  SyntheticSpec clean = noisy;
  clean.noise_fraction = 0.0;
  Rng ra(noisy.seed), rb(clean.seed);
  const auto pn = generate_synthetic(noisy, ra);
  const auto pc = generate_synthetic(clean, rb);

  CHECK(pn.train.inputs == pc.train.inputs);
  CHECK(pn.test.inputs == pc.test.inputs);
  // Normalized test targets differ (the map follows the noisy extremes),
  // but in raw units the test split is untouched.
  const Vec tn = denormalize_targets(pn.test);
  const Vec tc = denormalize_targets(pc.test);
  CHECK((tn - tc).cwiseAbs().maxCoeff() < 1e-12);
  const Vec yn = denormalize_targets(pn.train);
  const Vec yc = denormalize_targets(pc.train);
  CHECK((yn - yc).cwiseAbs().maxCoeff() > 1e-4);

  // With noise off, raw train targets recover the function exactly.
  for (Index i = 0; i < 50; ++i) {
    const double want = synthetic_function(1, pc.train.inputs.col(i));
    CHECK(std::abs(denormalize(pc.train, pc.train.targets(i)) - want) < 1e-12);
  }
}

TEST_CASE("train noise has the configured scale") {
  SyntheticSpec spec;
  spec.seed = 99;
  Rng rng(spec.seed);
  const auto pair = generate_synthetic(spec, rng);
  const Vec raw = denormalize_targets(pair.train);
  Vec resid(raw.size());
  for (Index i = 0; i < raw.size(); ++i) {
    resid(i) = raw(i) - synthetic_function(1, pair.train.inputs.col(i));
  }
  // Clean f1 targets over U[-1,1]^2 have a known spread; the residuals are
  // N(0, (0.05 * clean sd)^2). Estimate both from the data.
  Vec clean(raw.size());
  for (Index i = 0; i < raw.size(); ++i) clean(i) = raw(i) - resid(i);
  const double clean_sd =
      std::sqrt((clean.array() - clean.mean()).square().sum() / double(clean.size()));
  const double resid_sd =
      std::sqrt((resid.array() - resid.mean()).square().sum() / double(resid.size()));
  CHECK(resid_sd == doctest::Approx(0.05 * clean_sd).epsilon(0.05));
  CHECK(std::abs(resid.mean()) < 3.0 * resid_sd / std::sqrt(double(resid.size())));
}

TEST_CASE("five-input synthetic function generates cleanly") {
  SyntheticSpec spec;
  spec.function_id = 2;
  spec.input_dim = 5;
  spec.n_total = 600;
  spec.n_train = 500;
  spec.n_test = 100;
  spec.seed = 3;
  Rng rng(spec.seed);
  const auto pair = generate_synthetic(spec, rng);
  CHECK(pair.train.dim() == 5);
  CHECK(pair.train.targets.minCoeff() == -1.0);
  CHECK(pair.train.targets.maxCoeff() == 1.0);
}

TEST_CASE("synthetic spec validation rejects inconsistent settings") {
  SyntheticSpec spec;
  spec.function_id = 3;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.function_id = 1;
  spec.input_dim = 5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.input_dim = 2;
  spec.n_total = 11999;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.n_total = 12000;
  spec.noise_fraction = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("digit labels map to evenly spaced regression targets") {
  DatasetSplit s;
  s.inputs = Mat::Zero(4, 3);
  s.labels.resize(3);
  s.labels << 0, 9, 3;
  const auto r = mnist_as_regression(s);
  CHECK(r.targets(0) == -1.0);
  CHECK(r.targets(1) == 1.0);
  CHECK(r.targets(2) == 2.0 * 3.0 / 9.0 - 1.0);
  CHECK(!r.classification());
  CHECK(r.y_min == 0.0);
  CHECK(r.y_max == 9.0);

  s.labels(1) = 10;
  CHECK_THROWS_AS(mnist_as_regression(s), std::invalid_argument);
  DatasetSplit unlabeled;
  unlabeled.inputs = Mat::Zero(4, 3);
  CHECK_THROWS_AS(mnist_as_regression(unlabeled), std::invalid_argument);
}

TEST_CASE("stratified subsample keeps class proportions within one sample") {
  DatasetSplit s;
  const std::vector<int> counts = {5, 10, 25};
  const Index total = 40;
  s.inputs.resize(2, total);
  s.labels.resize(total);
  Index at = 0;
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k, ++at) {
      s.labels(at) = c;
      s.inputs.col(at) << double(c), double(at);
    }
  }

  Rng rng(7);
  for (const Index n : {Index(7), Index(8), Index(20), Index(40)}) {
    const auto sub = subsample(s, n, rng);
    CHECK(sub.size() == n);
    Vec got = Vec::Zero(3);
    for (Index i = 0; i < n; ++i) {
      got(sub.labels(i)) += 1.0;
      // Labels travel with their columns.
      CHECK(sub.inputs(0, i) == double(sub.labels(i)));
    }
    for (int c = 0; c < 3; ++c) {
      const double exact = double(n) * counts[static_cast<std::size_t>(c)] / double(total);
      CHECK(std::abs(got(c) - exact) < 1.0 + 1e-12);
    }
    // No duplicate source rows: the second coordinate identifies the row.
    std::vector<double> ids;
    for (Index i = 0; i < n; ++i) ids.push_back(sub.inputs(1, i));
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  }

  CHECK_THROWS_AS(subsample(s, 41, rng), std::invalid_argument);
  CHECK_THROWS_AS(subsample(s, 0, rng), std::invalid_argument);
}

TEST_CASE("subsample is seed-deterministic") {
  DatasetSplit s;
  s.inputs = Mat::Random(3, 30);
  s.labels.resize(30);
  for (Index i = 0; i < 30; ++i) s.labels(i) = static_cast<int>(i % 3);
  Rng a(11), b(11), c(12);
  const auto s1 = subsample(s, 12, a);
  const auto s2 = subsample(s, 12, b);
  const auto s3 = subsample(s, 12, c);
  CHECK(s1.inputs == s2.inputs);
  CHECK(s1.labels == s2.labels);
  CHECK(s1.inputs != s3.inputs);
}

TEST_CASE("regression subsample keeps targets and normalization metadata") {
  DatasetSplit s;
  s.inputs.resize(1, 20);
  s.targets.resize(20);
  for (Index i = 0; i < 20; ++i) {
    s.inputs(0, i) = double(i);
    s.targets(i) = 10.0 * double(i);
  }
  s.y_min = -2.0;
  s.y_max = 3.0;
  Rng rng(4);
  const auto sub = subsample(s, 8, rng);
  CHECK(sub.size() == 8);
  CHECK(sub.y_min == -2.0);
  CHECK(sub.y_max == 3.0);
  for (Index i = 0; i < 8; ++i) CHECK(sub.targets(i) == 10.0 * sub.inputs(0, i));
}

TEST_CASE("synthetic csv round trip is bit-exact") {
  SyntheticSpec spec;
  spec.n_total = 120;
  spec.n_train = 100;
  spec.n_test = 20;
  spec.seed = 21;
  Rng rng(spec.seed);
  const auto pair = generate_synthetic(spec, rng);
  const auto dir = test_dir();
  const auto train_path = (dir / "synth_train.csv").string();
  const auto test_path = (dir / "synth_test.csv").string();
  save_synthetic_csv(pair, train_path, test_path);
  const auto back = load_synthetic_csv(train_path, test_path);
  CHECK(back.train.inputs == pair.train.inputs);
  CHECK(back.train.targets == pair.train.targets);
  CHECK(back.test.inputs == pair.test.inputs);
  CHECK(back.test.targets == pair.test.targets);
  CHECK(back.train.y_min == pair.train.y_min);
  CHECK(back.train.y_max == pair.train.y_max);
  CHECK(back.spec.function_id == spec.function_id);
  CHECK(back.spec.seed == spec.seed);
  CHECK(back.spec.noise_fraction == spec.noise_fraction);
}

TEST_CASE("digit rendering is deterministic and produces distinct classes") {
  Rng a(8), b(8);
  const Vec d0 = render_digit(0, a);
  const Vec d0b = render_digit(0, b);
  CHECK(d0 == d0b);
  CHECK(d0.minCoeff() >= 0.0);
  CHECK(d0.maxCoeff() <= 1.0);
  CHECK(d0.mean() > 0.03);
  CHECK(d0.mean() < 0.5);

  Rng c(8);
  const Vec d1 = render_digit(1, c);
  CHECK((d0 - d1).norm() > 1.0);
  CHECK_THROWS_AS(render_digit(10, a), std::invalid_argument);
}

TEST_CASE("generated digit corpus loads back balanced and classifiable") {
  const auto dir = test_dir() / "digits";
  std::filesystem::create_directories(dir);
  generate_digit_idx(dir.string(), 200, 50, 42);
  const auto pair = load_mnist_dir(dir.string());
  CHECK(pair.train.size() == 200);
  CHECK(pair.test.size() == 50);
  CHECK(pair.train.dim() == 784);
  VecI counts = VecI::Zero(10);
  for (Index i = 0; i < pair.train.size(); ++i) counts(pair.train.labels(i)) += 1;
  for (int c = 0; c < 10; ++c) CHECK(counts(c) == 20);

  // Nearest class-mean on held-out halves: catches degenerate rendering.
  Mat means = Mat::Zero(784, 10);
  VecI seen = VecI::Zero(10);
  for (Index i = 0; i < 100; ++i) {
    means.col(pair.train.labels(i)) += pair.train.inputs.col(i);
    seen(pair.train.labels(i)) += 1;
  }
  for (int c = 0; c < 10; ++c) means.col(c) /= double(seen(c));
  int hits = 0;
  for (Index i = 100; i < 200; ++i) {
    Index best = 0;
    double best_d = 1e30;
    for (Index c = 0; c < 10; ++c) {
      const double dist = (pair.train.inputs.col(i) - means.col(c)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    hits += (best == pair.train.labels(i)) ? 1 : 0;
  }
  CHECK(hits >= 70);

  // Same seed regenerates the same files.
  const auto dir2 = test_dir() / "digits2";
  std::filesystem::create_directories(dir2);
  generate_digit_idx(dir2.string(), 200, 50, 42);
  const auto pair2 = load_mnist_dir(dir2.string());
  CHECK(pair.train.inputs == pair2.train.inputs);
  CHECK(pair.train.labels == pair2.train.labels);
  CHECK(pair.test.inputs == pair2.test.inputs);
}

}  // TEST_SUITE("data")
