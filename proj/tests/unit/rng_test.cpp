#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ffzo/types.hpp"

using ffzo::Rng;

TEST_SUITE("rng") {

TEST_CASE("same seed reproduces the sequence bitwise") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.normal() == d.normal());
    CHECK(c.uniform() == d.uniform());
  }
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform lies in [0,1)") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  // 1e5 draws should cover most of the interval.
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("uniform(lo,hi) respects bounds") {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(-2.5, 3.5);
    REQUIRE(u >= -2.5);
    REQUIRE(u < 3.5);
  }
}

TEST_CASE("uniform_int covers the inclusive range uniformly") {
  Rng rng(13);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const int k = rng.uniform_int(2, 7);
    REQUIRE(k >= 2);
    REQUIRE(k <= 7);
    counts[static_cast<size_t>(k - 2)]++;
  }
  for (int c : counts) {
    // Expected 10000 per bin; 5 sigma ~ 460.
    CHECK(std::abs(c - 10000) < 500);
  }
}

TEST_CASE("normal draws have the right first two moments") {
  Rng rng(17);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("normal_mat fills column-major from the scalar stream") {
  Rng a(23), b(23);
  const ffzo::Mat m = a.normal_mat(3, 2);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) CHECK(m(i, j) == b.normal());
}

TEST_CASE("permutation is a valid bijection") {
  Rng rng(29);
  const auto p = rng.permutation(257);
  std::vector<int> seen(257, 0);
  for (auto v : p) {
    REQUIRE(v >= 0);
    REQUIRE(v < 257);
    seen[static_cast<size_t>(v)]++;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("forked substreams are decoupled from the parent") {
  Rng parent(31);
  Rng child = parent.fork(1);
  Rng parent2(31);
  Rng child2 = parent2.fork(1);
  // Same tag, same parent seed: identical stream.
  for (int i = 0; i < 100; ++i) CHECK(child.next_u64() == child2.next_u64());
  // Distinct tags give distinct streams.
  Rng other = parent.fork(2);
  int same = 0;
  Rng child3 = parent2.fork(1);
  for (int i = 0; i < 100; ++i)
    if (other.next_u64() == child3.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("splitmix64 matches the reference sequence") {
  // Outputs of the reference generator stepping its state from 0 by the
  // golden-ratio increment; frozen to guard against edits to the mixer.
  constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  CHECK(ffzo::splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(ffzo::splitmix64(kGolden) == 0x6e789e6aa1b965f4ULL);
  CHECK(ffzo::splitmix64(2 * kGolden) == 0x06c45d188009454fULL);
}

}  // TEST_SUITE
