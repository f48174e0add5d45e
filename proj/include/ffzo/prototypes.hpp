#pragma once

#include <string>
#include <vector>

#include "ffzo/types.hpp"

namespace ffzo::proto {

using RotationMatrix = Mat;

/// Unit-norm, maximally separated class direction vectors.
/// Columns are prototypes: every column has norm 1, all pairwise dot
/// products equal -1/(c-1), and the columns sum to zero.
struct PrototypeSet {
  Mat vectors;  // d x c, one column per class

  int num_classes() const { return static_cast<int>(vectors.cols()); }
  int dim() const { return static_cast<int>(vectors.rows()); }
};

/// Antipodal pair encoding regression bounds y = -1 (lower) and y = +1 (upper).
struct RegressionPrototypePair {
  Vec lower;
  Vec upper;

  int dim() const { return static_cast<int>(upper.size()); }
};

/// Columns of the centered, normalized (c-1)-simplex, zero-padded to d rows.
/// Entry (i,j) for i < c is (delta_ij - 1/c) / z with z = sqrt(1 - 1/c).
/// Requires c >= 2 and d >= c.
PrototypeSet simplex_prototypes(int c, int d);

/// Uniformly random rotation in SO(d): sample M with i.i.d. standard-normal
/// entries, QR-factorize, fix column signs by diag(R_ii/|R_ii|), and resample
/// from scratch whenever the determinant comes out negative. `rejections`
/// (optional) receives the number of resampled draws.
RotationMatrix random_rotation(int d, Rng& rng, int* rejections = nullptr);

/// Apply T to every column. Isometry: norms and pairwise dots are preserved.
PrototypeSet rotate_prototypes(const PrototypeSet& set, const RotationMatrix& T);

/// Simplex construction followed by a random orientation.
PrototypeSet make_prototypes(int c, int d, Rng& rng);

/// Antipodal pair: upper = first column of a randomly rotated 2-class
/// simplex, lower = -upper. Requires d >= 2.
RegressionPrototypePair regression_prototypes(int d, Rng& rng);

/// CSV archive, one column per class, header row class_0..class_{c-1}.
void save_csv(const PrototypeSet& set, const std::string& path);
PrototypeSet load_csv(const std::string& path);

}  // namespace ffzo::proto
