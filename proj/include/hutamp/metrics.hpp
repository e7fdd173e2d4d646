#pragma once

// Spectral angle distance, permutation-aligned NMSE, and the evaluation
// report used by the experiment harness.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "hutamp/core_data.hpp"

namespace hutamp {

inline constexpr double kNmseFloorDb = -300.0;

// Angle between two spectra, in degrees.
inline double sad(const Vector& s1, const Vector& s2) {
  if (s1.size() != s2.size()) throw ShapeError("sad: length mismatch");
  const double n1 = s1.norm();
  const double n2 = s2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw InputError("sad: zero spectrum");
  const double c = std::clamp(s1.dot(s2) / (n1 * n2), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

inline double nmse_db(const Matrix& truth, const Matrix& est) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw ShapeError("nmse: shape mismatch");
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw InputError("nmse: truth is zero");
  const double err = (truth - est).squaredNorm();
  if (err == 0.0) return kNmseFloorDb;
  return std::max(kNmseFloorDb, 10.0 * std::log10(err / denom));
}

// Minimum-cost perfect matching on a square cost matrix. Returns assign
// with assign[row] = column.
inline std::vector<Index> hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ShapeError("hungarian: cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> assign(n);
  for (Index j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

// perm[i] is the estimate column matched to truth column i, minimizing the
// total SAD. Exhaustive for N <= 8, Hungarian otherwise.
inline std::vector<Index> match_columns(const Matrix& truth, const Matrix& est) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw ShapeError("match_columns: shape mismatch");
  const Index n = truth.cols();
  Matrix cost(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double ni = truth.col(i).norm();
      const double nj = est.col(j).norm();
      cost(i, j) = (ni > 0.0 && nj > 0.0) ? sad(truth.col(i), est.col(j)) : 180.0;
    }
  if (n > 8) return hungarian(cost);
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<Index> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Index i = 0; i < n; ++i) c += cost(i, perm[i]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline Matrix permute_columns(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), static_cast<Index>(perm.size()));
  for (std::size_t i = 0; i < perm.size(); ++i) out.col(static_cast<Index>(i)) = m.col(perm[i]);
  return out;
}

inline Matrix permute_rows(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(static_cast<Index>(perm.size()), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Index>(i)) = m.row(perm[i]);
  return out;
}

enum class AlignKind { kEndmemberColumns, kAbundanceRows };

struct AlignedNmse {
  double nmse_db = 0.0;
  std::vector<Index> permutation;
};

inline AlignedNmse aligned_nmse(const Matrix& truth, const Matrix& est, AlignKind kind) {
  AlignedNmse out;
  if (kind == AlignKind::kEndmemberColumns) {
    out.permutation = match_columns(truth, est);
    out.nmse_db = nmse_db(truth, permute_columns(est, out.permutation));
  } else {
    out.permutation = match_columns(truth.transpose(), est.transpose());
    out.nmse_db = nmse_db(truth, permute_rows(est, out.permutation));
  }
  return out;
}

struct MetricsReport {
  std::vector<double> sad_per_material;
  double sad_avg = 0.0;
  double nmse_s_db = 0.0;
  double nmse_a_db = 0.0;
  std::vector<Index> permutation;
  bool success = false;
};

// Align by endmember SAD and apply the same permutation to the abundances.
inline MetricsReport evaluate(const Matrix& s_true, const Matrix& a_true,
                              const Matrix& s_est, const Matrix& a_est,
                              double success_db = -40.0) {
  if (s_true.cols() != s_est.cols() || a_true.rows() != a_est.rows() ||
      a_true.cols() != a_est.cols())
    throw ShapeError("evaluate: estimate shapes do not match truth");
  MetricsReport r;
  r.permutation = match_columns(s_true, s_est);
  const Matrix sp = permute_columns(s_est, r.permutation);
  const Matrix ap = permute_rows(a_est, r.permutation);
  for (Index n = 0; n < s_true.cols(); ++n) {
    const double v = (sp.col(n).norm() > 0.0) ? sad(s_true.col(n), sp.col(n)) : 90.0;
    r.sad_per_material.push_back(v);
    r.sad_avg += v / static_cast<double>(s_true.cols());
  }
  r.nmse_s_db = nmse_db(s_true, sp);
  r.nmse_a_db = nmse_db(a_true, ap);
  r.success = r.nmse_s_db < success_db;
  return r;
}

}  // namespace hutamp
