#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ffzo/data.hpp"

// Offline stand-in for the handwritten digit corpus: each class is a stroke
// skeleton in the unit square, jittered per sample by a random affine map and
// rendered with soft edges into a 28x28 grid. The corpus is balanced and
// fully determined by the seed.

namespace ffzo::data {
namespace {

struct P {
  double x, y;
};
using Polyline = std::vector<P>;
using Glyph = std::vector<Polyline>;

// Unit-square coordinates, y pointing down.
const std::array<Glyph, 10>& glyphs() {
  static const std::array<Glyph, 10> g = {{
      // 0
      {{{0.50, 0.05}, {0.83, 0.25}, {0.83, 0.75}, {0.50, 0.95}, {0.17, 0.75}, {0.17, 0.25}, {0.50, 0.05}}},
      // 1
      {{{0.32, 0.25}, {0.55, 0.05}, {0.55, 0.95}}},
      // 2
      {{{0.18, 0.28}, {0.32, 0.08}, {0.68, 0.08}, {0.82, 0.28}, {0.76, 0.48}, {0.18, 0.92}, {0.84, 0.92}}},
      // 3
      {{{0.20, 0.12}, {0.70, 0.05}, {0.84, 0.28}, {0.50, 0.48}, {0.88, 0.70}, {0.68, 0.94}, {0.20, 0.88}}},
      // 4
      {{{0.66, 0.05}, {0.16, 0.58}, {0.86, 0.58}}, {{0.70, 0.32}, {0.70, 0.95}}},
      // 5
      {{{0.80, 0.08}, {0.22, 0.08}, {0.22, 0.45}, {0.64, 0.42}, {0.84, 0.62}, {0.78, 0.86}, {0.52, 0.95}, {0.20, 0.85}}},
      // 6
      {{{0.70, 0.05}, {0.38, 0.35}, {0.22, 0.66}, {0.36, 0.92}, {0.66, 0.92}, {0.80, 0.70}, {0.60, 0.52}, {0.26, 0.62}}},
      // 7
      {{{0.16, 0.12}, {0.84, 0.12}, {0.42, 0.95}}},
      // 8
      {{{0.50, 0.05}, {0.77, 0.17}, {0.77, 0.37}, {0.50, 0.50}, {0.23, 0.37}, {0.23, 0.17}, {0.50, 0.05}},
       {{0.50, 0.50}, {0.81, 0.63}, {0.81, 0.85}, {0.50, 0.95}, {0.19, 0.85}, {0.19, 0.63}, {0.50, 0.50}}},
      // 9
      {{{0.76, 0.40}, {0.58, 0.54}, {0.30, 0.46}, {0.22, 0.22}, {0.46, 0.05}, {0.72, 0.12}, {0.76, 0.40}, {0.66, 0.95}}},
  }};
  return g;
}

double segment_distance(double px, double py, const P& a, const P& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (a.x + t * dx), ey = py - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

Vec render_digit(int digit, Rng& rng) {
  if (digit < 0 || digit > 9) throw std::invalid_argument("render_digit: digit outside 0..9");
  constexpr int kSide = 28;
  constexpr double kMargin = 4.0;
  constexpr double kScale = kSide - 2.0 * kMargin;

  // Per-sample jitter, drawn in a fixed order.
  const double rot = rng.uniform(-0.22, 0.22);
  const double sx = rng.uniform(0.85, 1.15);
  const double sy = rng.uniform(0.85, 1.15);
  const double shear = rng.uniform(-0.18, 0.18);
  const double tx = rng.uniform(-0.06, 0.06);
  const double ty = rng.uniform(-0.06, 0.06);
  const double width = rng.uniform(1.0, 1.5);  // stroke half-width in pixels

  const double c = std::cos(rot), s = std::sin(rot);
  const auto map = [&](const P& p) {
    // Center, shear, scale, rotate, translate, then place on the grid.
    double x = p.x - 0.5, y = p.y - 0.5;
    x += shear * y;
    x *= sx;
    y *= sy;
    const double xr = c * x - s * y, yr = s * x + c * y;
    return P{kMargin + kScale * (xr + 0.5 + tx), kMargin + kScale * (yr + 0.5 + ty)};
  };

  std::vector<std::pair<P, P>> segs;
  for (const auto& line : glyphs()[static_cast<std::size_t>(digit)]) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      segs.emplace_back(map(line[i]), map(line[i + 1]));
    }
  }

  Vec img(kSide * kSide);
  for (int row = 0; row < kSide; ++row) {
    for (int col = 0; col < kSide; ++col) {
      const double px = col + 0.5, py = row + 0.5;
      double d = 1e30;
      for (const auto& [a, b] : segs) d = std::min(d, segment_distance(px, py, a, b));
      const double v = 1.3 * std::exp(-0.5 * (d / width) * (d / width));
      img(row * kSide + col) = std::min(v, 1.0);
    }
  }
  for (Index i = 0; i < img.size(); ++i) {
    img(i) = std::clamp(img(i) + 0.02 * rng.normal(), 0.0, 1.0);
  }
  return img;
}

namespace {

DatasetSplit render_split(Index n, Rng& rng, const std::string& tag) {
  DatasetSplit split;
  split.tag = tag;
  split.inputs.resize(28 * 28, n);
  split.labels.resize(n);
  // Balanced classes in shuffled order; rendering consumes the stream in
  // the final sample order, so the split is seed-deterministic.
  const auto order = rng.permutation(n);
  for (Index i = 0; i < n; ++i) {
    const int digit = static_cast<int>(order[static_cast<std::size_t>(i)] % 10);
    split.labels(i) = digit;
    split.inputs.col(i) = render_digit(digit, rng);
  }
  return split;
}

}  // namespace

void generate_digit_idx(const std::string& dir, Index n_train, Index n_test,
                        std::uint64_t seed) {
  if (n_train < 10 || n_test < 10) {
    throw std::invalid_argument("generate_digit_idx: need at least 10 samples per split");
  }
  Rng master(seed);
  auto train_rng = master.fork(1);
  auto test_rng = master.fork(2);
  const auto train = render_split(n_train, train_rng, "train");
  const auto test = render_split(n_test, test_rng, "test");
  write_idx(train, dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  write_idx(test, dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
}

}  // namespace ffzo::data
