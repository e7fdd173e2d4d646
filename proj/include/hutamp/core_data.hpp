#pragma once

// Hyperspectral cube container and the mean-removed, augmented observation
// model shared by the rest of the library.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hutamp/errors.hpp"

namespace hutamp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct GridShape {
  Index rows = 1;  // T1
  Index cols = 1;  // T2
  Index size() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

// Pixel t sits at grid row t / T2, column t % T2 (row-major).
inline Index pixel_index(const GridShape& g, Index r, Index c) {
  return r * g.cols + c;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// M x T observation matrix laid out over a T1 x T2 pixel grid.
class HsiCube {
 public:
  HsiCube() = default;
  HsiCube(Matrix data, GridShape grid, std::vector<double> bands = {})
      : data_(std::move(data)), grid_(grid), bands_(std::move(bands)) {
    validate();
  }

  // Convenience for 1 x T layouts.
  explicit HsiCube(Matrix data)
      : HsiCube(data, GridShape{1, data.cols()}) {}

  const Matrix& data() const { return data_; }
  const GridShape& grid() const { return grid_; }
  const std::vector<double>& bands() const { return bands_; }
  Index bands_count() const { return data_.rows(); }
  Index pixels() const { return data_.cols(); }

 private:
  void validate() const {
    if (data_.rows() < 1) throw InputError("cube: M must be >= 1");
    if (grid_.rows < 1 || grid_.cols < 1)
      throw InputError("cube: T1 and T2 must be >= 1");
    if (grid_.size() != data_.cols())
      throw ShapeError("cube: T1*T2 = " + std::to_string(grid_.size()) +
                       " does not match " + std::to_string(data_.cols()) +
                       " columns");
    if (!bands_.empty() && static_cast<Index>(bands_.size()) != data_.rows())
      throw ShapeError("cube: band label count does not match M");
    if (!all_finite(data_)) throw InputError("cube: non-finite entry in data");
  }

  Matrix data_;
  GridShape grid_;
  std::vector<double> bands_;
};

struct Endmembers {
  Matrix s;  // M x N
  Index count() const { return s.cols(); }
};

struct Abundances {
  Matrix a;  // N x T
};

// Largest deviation of any column of `a` from the simplex.
inline double simplex_violation(const Matrix& a) {
  double worst = 0.0;
  for (Index t = 0; t < a.cols(); ++t) {
    worst = std::max(worst, std::abs(a.col(t).sum() - 1.0));
    worst = std::max(worst, -a.col(t).minCoeff());
  }
  return worst;
}

struct MeanRemoved {
  double mu = 0.0;
  Matrix ytilde;  // M x T
};

inline MeanRemoved mean_remove(const Matrix& y) {
  if (!all_finite(y)) throw InputError("mean_remove: non-finite entries");
  if (y.size() == 0) throw InputError("mean_remove: empty matrix");
  MeanRemoved out;
  out.mu = y.sum() / static_cast<double>(y.size());
  out.ytilde = y.array() - out.mu;
  return out;
}

inline MeanRemoved mean_remove(const HsiCube& cube) {
  return mean_remove(cube.data());
}

enum class RowKind { kGaussian, kDirac };

// Ybar = [Ytilde; 1^T] with per-band noise variances for the Gaussian rows
// and an exact (Dirac) row enforcing the abundance sum-to-one constraint.
struct AugmentedObs {
  Matrix ybar;  // (M+1) x T
  double mu = 0.0;
  Vector psi;   // length M

  Index bands_count() const { return ybar.rows() - 1; }
  Index pixels() const { return ybar.cols(); }
  RowKind row_kind(Index m) const {
    return m < bands_count() ? RowKind::kGaussian : RowKind::kDirac;
  }
};

inline AugmentedObs augment(const Matrix& ytilde, const Vector& psi,
                            double mu = 0.0) {
  if (psi.size() != ytilde.rows())
    throw ShapeError("augment: psi length " + std::to_string(psi.size()) +
                     " != M = " + std::to_string(ytilde.rows()));
  for (Index m = 0; m < psi.size(); ++m)
    if (!(psi[m] > 0.0) || !std::isfinite(psi[m]))
      throw ParameterError("augment: psi must be positive and finite");
  AugmentedObs out;
  out.ybar.resize(ytilde.rows() + 1, ytilde.cols());
  out.ybar.topRows(ytilde.rows()) = ytilde;
  out.ybar.row(ytilde.rows()).setOnes();
  out.mu = mu;
  out.psi = psi;
  return out;
}

// Scalar-noise convenience form.
inline AugmentedObs augment(const Matrix& ytilde, double psi, double mu = 0.0) {
  return augment(ytilde, Vector::Constant(ytilde.rows(), psi), mu);
}

// Strip the augmentation row and restore the mean.
inline Matrix restore_observations(const AugmentedObs& obs) {
  return obs.ybar.topRows(obs.bands_count()).array() + obs.mu;
}

}  // namespace hutamp
