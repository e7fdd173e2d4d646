#pragma once

// Pure-pixel endmember extraction (successive projections), fully
// constrained least squares, and Euclidean projection onto the simplex.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hutamp/core_data.hpp"

namespace hutamp {

struct FsnmfResult {
  Matrix s;                    // M x N
  std::vector<Index> indices;  // selected pixel per endmember
};

// Orthonormal basis of the top-k left singular vectors of the row-mean
// removed data, and the row mean itself.
struct SignalSubspace {
  Matrix basis;  // M x k
  Vector mean;   // M
};

inline SignalSubspace signal_subspace(const Matrix& y, Index k) {
  SignalSubspace out;
  out.mean = y.rowwise().mean();
  const Matrix centered = y.colwise() - out.mean;
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  k = std::min<Index>(k, svd.matrixU().cols());
  out.basis = svd.matrixU().leftCols(k);
  return out;
}

inline Matrix project_affine(const Matrix& s, const SignalSubspace& sub) {
  const Matrix c = s.colwise() - sub.mean;
  return (sub.basis * (sub.basis.transpose() * c)).colwise() + sub.mean;
}

inline FsnmfResult fsnmf_extract(const Matrix& y, Index n, bool denoise) {
  const Index M = y.rows();
  const Index T = y.cols();
  if (n < 1 || n > std::min(M, T))
    throw ParameterError("fsnmf: N must satisfy 1 <= N <= min(M, T)");
  Matrix r = y;
  Vector norms = r.colwise().squaredNorm().transpose();
  const double scale = norms.maxCoeff();
  FsnmfResult out;
  out.s.resize(M, n);
  for (Index k = 0; k < n; ++k) {
    Index j = 0;
    const double best = norms.maxCoeff(&j);
    if (!(best > 1e-20 * scale) || !(scale > 0.0))
      throw InitError("fsnmf: residual collapsed after " + std::to_string(k) +
                      " of " + std::to_string(n) + " endmembers (rank-deficient data)");
    out.indices.push_back(j);
    out.s.col(k) = y.col(j);
    const Vector u = r.col(j) / std::sqrt(best);
    r -= u * (u.transpose() * r);
    norms = r.colwise().squaredNorm().transpose();
  }
  if (denoise) out.s = project_affine(out.s, signal_subspace(y, n));
  return out;
}

struct FclsStats {
  Index degenerate_pixels = 0;
  double max_kkt_residual = 0.0;
};

namespace detail {

// Active-set solve of min 0.5 a'Ha + f'a s.t. a >= 0, sum(a) = 1, from the
// feasible start `a`. Returns the final KKT residual.
inline double fcls_pixel(const Matrix& H, const Vector& f, Vector& a,
                         bool* degenerate) {
  const Index N = H.rows();
  std::vector<char> fixed(N, 0);
  for (Index i = 0; i < N; ++i) fixed[i] = a[i] <= 0.0;
  const double tol = 1e-12 * std::max(1.0, H.diagonal().maxCoeff());
  for (int iter = 0; iter < 20 * static_cast<int>(N) + 100; ++iter) {
    std::vector<Index> free_idx;
    for (Index i = 0; i < N; ++i)
      if (!fixed[i]) free_idx.push_back(i);
    const Index F = static_cast<Index>(free_idx.size());
    Matrix kkt = Matrix::Zero(F + 1, F + 1);
    Vector rhs(F + 1);
    for (Index p = 0; p < F; ++p) {
      for (Index q = 0; q < F; ++q) kkt(p, q) = H(free_idx[p], free_idx[q]);
      kkt(p, F) = kkt(F, p) = 1.0;
      rhs[p] = -f[free_idx[p]];
    }
    rhs[F] = 1.0;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(kkt);
    if (cod.rank() < F + 1 && degenerate) *degenerate = true;
    const Vector sol = cod.solve(rhs);
    Vector target = Vector::Zero(N);
    for (Index p = 0; p < F; ++p) target[free_idx[p]] = sol[p];
    const double lambda = sol[F];

    bool feasible = true;
    for (Index p = 0; p < F; ++p)
      if (target[free_idx[p]] < -1e-15) feasible = false;
    if (feasible) {
      a = target.cwiseMax(0.0);
      const Vector g = H * a + f;
      Index worst = -1;
      double worst_mu = -tol;
      for (Index i = 0; i < N; ++i)
        if (fixed[i]) {
          const double mu = g[i] + lambda;
          if (mu < worst_mu) {
            worst_mu = mu;
            worst = i;
          }
        }
      if (worst < 0) break;
      fixed[worst] = 0;
      continue;
    }
    // Step toward the target until the first free coordinate hits zero.
    double step = 1.0;
    Index block = -1;
    for (Index p = 0; p < F; ++p) {
      const Index i = free_idx[p];
      const double d = target[i] - a[i];
      if (d < 0.0) {
        const double s = a[i] / -d;
        if (s < step) {
          step = s;
          block = i;
        }
      }
    }
    a += step * (target - a);
    if (block >= 0) {
      a[block] = 0.0;
      fixed[block] = 1;
    }
    for (Index i = 0; i < N; ++i)
      if (!fixed[i] && a[i] <= 0.0) {
        a[i] = 0.0;
        fixed[i] = 1;
      }
  }
  a = a.cwiseMax(0.0);
  a /= a.sum();
  // KKT residual: stationarity on the support, dual feasibility off it.
  const Vector g = H * a + f;
  double lam = 0.0;
  Index cnt = 0;
  for (Index i = 0; i < N; ++i)
    if (a[i] > 0.0) {
      lam -= g[i];
      ++cnt;
    }
  lam /= std::max<Index>(cnt, 1);
  double res = 0.0;
  for (Index i = 0; i < N; ++i) {
    const double mu = g[i] + lam;
    res = std::max(res, a[i] > 0.0 ? std::abs(mu) : std::max(0.0, -mu));
  }
  return res;
}

}  // namespace detail

// Per-pixel min ||y_t - S a||^2 s.t. a >= 0, 1'a = 1, warm-started from the
// previous pixel's solution.
inline Matrix fcls(const Matrix& y, const Matrix& s, FclsStats* stats = nullptr) {
  if (y.rows() != s.rows()) throw ShapeError("fcls: Y and S band counts differ");
  const Index N = s.cols();
  const Index T = y.cols();
  const Matrix H = s.transpose() * s;
  const Matrix F = -(s.transpose() * y);
  Matrix a(N, T);
  Vector warm = Vector::Constant(N, 1.0 / static_cast<double>(N));
  FclsStats st;
  for (Index t = 0; t < T; ++t) {
    Vector at = warm;
    bool degenerate = false;
    const double kkt = detail::fcls_pixel(H, F.col(t), at, &degenerate);
    st.max_kkt_residual = std::max(st.max_kkt_residual, kkt);
    if (degenerate) ++st.degenerate_pixels;
    a.col(t) = at;
    warm = at;
  }
  if (stats) *stats = st;
  return a;
}

// Euclidean projection of v onto {x >= 0, sum x = 1}.
inline Vector project_simplex(const Vector& v) {
  const Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double theta = 0.0;
  for (Index i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  Vector x = (v.array() - theta).cwiseMax(0.0);
  // Clean up rounding so the sum is 1 to machine precision.
  const double s = x.sum();
  if (s > 0.0) x /= s;
  return x;
}

inline Matrix project_simplex_columns(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Index t = 0; t < a.cols(); ++t) out.col(t) = project_simplex(a.col(t));
  return out;
}

}  // namespace hutamp
