#include "ffzo/prototypes.hpp"

#include <Eigen/QR>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ffzo::proto {

PrototypeSet simplex_prototypes(int c, int d) {
  if (c < 2) throw std::invalid_argument("simplex_prototypes: need c >= 2");
  if (d < c) throw std::invalid_argument("simplex_prototypes: need d >= c");
  const double z = std::sqrt(1.0 - 1.0 / c);
  Mat x = Mat::Zero(d, c);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < c; ++i) {
      const double entry = (i == j ? 1.0 - 1.0 / c : -1.0 / c);
      x(i, j) = entry / z;
    }
  }
  return PrototypeSet{std::move(x)};
}

RotationMatrix random_rotation(int d, Rng& rng, int* rejections) {
  if (d < 1) throw std::invalid_argument("random_rotation: need d >= 1");
  constexpr int kMaxResamples = 64;  // rejection probability is 1/2 per draw
  int rejected = 0;
  for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
    const Mat m = rng.normal_mat(d, d);
    Eigen::HouseholderQR<Mat> qr(m);
    const Mat q = qr.householderQ();
    const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    bool degenerate = false;
    Vec signs(d);
    for (int i = 0; i < d; ++i) {
      if (r(i, i) == 0.0) {
        degenerate = true;  // measure-zero under Gaussian sampling
        break;
      }
      signs[i] = r(i, i) > 0.0 ? 1.0 : -1.0;
    }
    if (degenerate) {
      ++rejected;
      continue;
    }
    Mat t = q * signs.asDiagonal();
    if (t.determinant() < 0.0) {
      ++rejected;
      continue;
    }
    if (rejections) *rejections = rejected;
    return t;
  }
  throw std::runtime_error("random_rotation: exceeded resample cap (broken rng?)");
}

PrototypeSet rotate_prototypes(const PrototypeSet& set, const RotationMatrix& T) {
  if (T.rows() != set.vectors.rows() || T.cols() != set.vectors.rows())
    throw std::invalid_argument("rotate_prototypes: rotation dim mismatch");
  return PrototypeSet{T * set.vectors};
}

PrototypeSet make_prototypes(int c, int d, Rng& rng) {
  return rotate_prototypes(simplex_prototypes(c, d), random_rotation(d, rng));
}

RegressionPrototypePair regression_prototypes(int d, Rng& rng) {
  if (d < 2) throw std::invalid_argument("regression_prototypes: need d >= 2");
  const PrototypeSet set = make_prototypes(2, d, rng);
  Vec upper = set.vectors.col(0);
  return RegressionPrototypePair{-upper, upper};
}

void save_csv(const PrototypeSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  const int c = set.num_classes();
  for (int j = 0; j < c; ++j) out << (j ? "," : "") << "class_" << j;
  out << "\n";
  char buf[32];
  for (int i = 0; i < set.dim(); ++i) {
    for (int j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", set.vectors(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

PrototypeSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file");
  int cols = 1;
  for (char ch : line)
    if (ch == ',') ++cols;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != cols)
      throw std::runtime_error("load_csv: ragged row in " + path);
    rows.push_back(std::move(row));
  }
  Mat v(static_cast<Index>(rows.size()), cols);
  for (Index i = 0; i < v.rows(); ++i)
    for (Index j = 0; j < v.cols(); ++j)
      v(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return PrototypeSet{std::move(v)};
}

}  // namespace ffzo::proto
